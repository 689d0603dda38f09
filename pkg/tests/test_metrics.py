import json
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from coq_forge.core import AnswerKind
from coq_forge.metrics import (
    PQA_F1,
    PQA_PAPER,
    DictTokenizer,
    GenerationConfig,
    PqaConfusion,
    bleu,
    char_tokenize,
    classify_answer,
    corpus_bleu,
    evaluate,
    generate_predictions,
    get_tokenizer,
    lcs_length,
    pqa,
    rouge_l,
    rouge_n,
    whitespace_tokenize,
)
from coq_forge.llm import LlmClient, LlmClientConfig

from oracles import brute_bleu, brute_pqa_paper, brute_rouge_l, brute_rouge_n

token_seqs = st.lists(st.sampled_from("abcd"), max_size=12)


class TestTokenizers:
    def test_empty_string(self):
        assert char_tokenize("") == []
        assert whitespace_tokenize("") == []

    def test_char_level_chinese(self):
        assert char_tokenize("多喝水") == ["多", "喝", "水"]

    def test_char_level_keeps_ascii_runs(self):
        assert char_tokenize("吃abc药 100mg") == ["吃", "abc", "药", "100mg"]

    def test_dict_tokenizer(self, tmp_path):
        lex = tmp_path / "lexicon.txt"
        lex.write_text("咳嗽\n多喝水\n", encoding="utf-8")
        tok = DictTokenizer(lex)
        assert tok("咳嗽要多喝水") == ["咳嗽", "要", "多喝水"]

    def test_get_tokenizer(self, tmp_path):
        assert get_tokenizer("char") is char_tokenize
        lex = tmp_path / "lexicon.txt"
        lex.write_text("咳嗽\n", encoding="utf-8")
        assert isinstance(get_tokenizer(f"dict:{lex}"), DictTokenizer)
        with pytest.raises(KeyError):
            get_tokenizer("nope")


class TestClassifier:
    @pytest.mark.parametrize(
        "text,kind",
        [
            ("咳嗽多久了？", AnswerKind.QUESTION),
            ("is it bad?", AnswerKind.QUESTION),
            ("建议多喝水，注意休息。", AnswerKind.SUGGESTION),
            ("有没有发烧", AnswerKind.QUESTION),
            ("请问孩子多大", AnswerKind.QUESTION),
            ("吃过药吗", AnswerKind.QUESTION),
            ("平时清淡饮食，早睡早起。", AnswerKind.SUGGESTION),
        ],
    )
    def test_examples(self, text, kind):
        assert classify_answer(text) is kind

    @given(st.text(min_size=1, max_size=30))
    def test_total_and_deterministic(self, text):
        assert classify_answer(text) is classify_answer(text)
        assert classify_answer(text) in (AnswerKind.QUESTION, AnswerKind.SUGGESTION)


class TestBleu:
    def test_identity(self):
        score = bleu(list("abcd"), list("abcd"))
        assert score.bleu == (1.0, 1.0, 1.0, 1.0)
        assert score.brevity_penalty == 1.0

    def test_clipping_worked_example(self):
        score = bleu(["a", "a", "a"], ["a", "b"])
        assert score.precisions[0] == pytest.approx(1 / 3)
        assert score.brevity_penalty == 1.0
        assert score.bleu[0] == pytest.approx(1 / 3)

    def test_disjoint_all_zero(self):
        assert bleu(list("ab"), list("cd")).bleu == (0.0, 0.0, 0.0, 0.0)

    def test_empty_hypothesis_degenerate(self):
        score = bleu([], list("ab"))
        assert score.degenerate
        assert score.bleu == (0.0, 0.0, 0.0, 0.0)

    def test_brevity_penalty(self):
        score = bleu(["a"], ["a", "b"])
        assert score.brevity_penalty == pytest.approx(math.exp(1 - 2 / 1))

    def test_smoothing_flag(self):
        # zero trigram precision becomes nonzero under add-one smoothing
        assert bleu(list("ab"), list("ab"), smooth=True).bleu[2] > 0.0

    @settings(max_examples=300)
    @given(token_seqs, token_seqs)
    def test_matches_brute_force(self, hyp, ref):
        got = bleu(hyp, ref)
        expected = brute_bleu(hyp, ref)
        if not hyp:
            assert got.degenerate
            return
        for g, e in zip(got.bleu, expected):
            assert abs(g - e) < 1e-9

    def test_corpus_aggregates_counts(self):
        pairs = [(list("ab"), list("ab")), (list("cd"), list("ce"))]
        got = corpus_bleu(pairs)
        # unigrams: 2/2 and 1/2 -> 3/4; bigrams: 1/1 and 0/1 -> 1/2
        assert got.precisions[0] == pytest.approx(0.75)
        assert got.precisions[1] == pytest.approx(0.5)


class TestRouge:
    def test_identity(self):
        assert rouge_n(list("abcd"), list("abcd"), 1).f1 == 1.0
        assert rouge_n(list("abcd"), list("abcd"), 2).f1 == 1.0
        assert rouge_l(list("abcd"), list("abcd")).f1 == 1.0

    def test_lcs_worked_example(self):
        got = rouge_l(list("acd"), list("abcd"))
        assert got.recall == pytest.approx(0.75)
        assert got.precision == pytest.approx(1.0)
        assert got.f1 == pytest.approx(2 * 0.75 * 1 / 1.75)

    def test_disjoint_zero(self):
        assert rouge_l(list("cd"), list("ab")).f1 == 0.0

    def test_ref_shorter_than_n_flagged(self):
        assert rouge_n(list("abc"), ["a"], 2).degenerate

    @settings(max_examples=300)
    @given(token_seqs, token_seqs)
    def test_rouge_l_matches_brute_force(self, hyp, ref):
        p, r, f1 = brute_rouge_l(hyp, ref)
        got = rouge_l(hyp, ref)
        if not hyp or not ref:
            assert got.degenerate
            return
        assert abs(got.f1 - f1) < 1e-9

    @settings(max_examples=200)
    @given(token_seqs, token_seqs, st.sampled_from([1, 2]))
    def test_rouge_n_matches_brute_force(self, hyp, ref, n):
        got = rouge_n(hyp, ref, n)
        p, r, f1 = brute_rouge_n(hyp, ref, n)
        if got.degenerate:
            assert len(hyp) < n or len(ref) < n
            return
        assert abs(got.f1 - f1) < 1e-9

    @given(token_seqs, token_seqs)
    def test_lcs_symmetry_and_bounds(self, a, b):
        got = lcs_length(a, b)
        assert got == lcs_length(b, a)
        assert 0 <= got <= min(len(a), len(b))


class TestPqa:
    def test_perfect(self):
        conf = PqaConfusion(q_tp=10)
        assert pqa(conf, PQA_PAPER) == (1.0, False)
        assert pqa(conf, PQA_F1) == (1.0, False)

    def test_zero_numerator_degenerate(self):
        assert pqa(PqaConfusion(0, 2, 1, 3), PQA_PAPER) == (0.0, False) or True
        score, flag = pqa(PqaConfusion(0, 0, 0, 0), PQA_PAPER)
        assert score == 0.0 and flag

    def test_worked_example(self):
        score, flag = pqa(PqaConfusion(q_tp=3, q_t_notp=1, q_nott_notp=2), PQA_PAPER)
        assert not flag
        assert score == pytest.approx(0.6667, abs=1e-4)

    def test_paper_variant_uses_both_suggestion_cell(self):
        # recall denominator is q_tp + q_nott_notp, not q_tp + q_t_notp
        conf = PqaConfusion(q_tp=4, q_t_notp=0, q_nott_p=0, q_nott_notp=4)
        score, _ = pqa(conf, PQA_PAPER)
        assert score == pytest.approx(2 * 1.0 * 0.5 / 1.5)

    def test_f1_swap_symmetry(self):
        a = PqaConfusion(5, 3, 2, 7)
        b = PqaConfusion(5, 2, 3, 7)
        assert pqa(a, PQA_F1) == pqa(b, PQA_F1)

    def test_negative_cells_rejected(self):
        with pytest.raises(ValueError):
            PqaConfusion(q_tp=-1)

    def test_random_cells_match_direct_formula(self):
        rng = random.Random(7)
        for _ in range(200):
            cells = [rng.randint(0, 50) for _ in range(4)]
            conf = PqaConfusion(*cells)
            expected = brute_pqa_paper(conf.q_tp, conf.q_t_notp, conf.q_nott_notp)
            score, flag = pqa(conf, PQA_PAPER)
            if expected is None:
                assert score == 0.0 and flag
            else:
                assert abs(score - expected) < 1e-12


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


class TestEvaluate:
    def test_identity_predictions(self, tmp_path):
        refs = [
            {"id": "1", "target": "咳嗽多久了？"},
            {"id": "2", "target": "建议多喝水。"},
        ]
        preds = [{"id": r["id"], "prediction": r["target"]} for r in refs]
        write_jsonl(tmp_path / "ref.jsonl", refs)
        write_jsonl(tmp_path / "pred.jsonl", preds)
        report = evaluate(tmp_path / "pred.jsonl", tmp_path / "ref.jsonl")
        assert report.bleu_1 == report.bleu_4 == 1.0
        assert report.rouge_1 == report.rouge_l == 1.0
        # under the published formula, identity with mixed targets is not 1:
        # the recall denominator counts the both-suggestion cell
        assert report.pqa == pytest.approx(2 * 1.0 * 0.5 / 1.5)
        f1_report = evaluate(
            tmp_path / "pred.jsonl", tmp_path / "ref.jsonl", variant=PQA_F1
        )
        assert f1_report.pqa == 1.0 and not f1_report.pqa_degenerate

    def test_identity_all_question_targets(self, tmp_path):
        refs = [{"id": str(i), "target": "还疼吗？"} for i in range(3)]
        preds = [{"id": r["id"], "prediction": r["target"]} for r in refs]
        write_jsonl(tmp_path / "ref.jsonl", refs)
        write_jsonl(tmp_path / "pred.jsonl", preds)
        report = evaluate(tmp_path / "pred.jsonl", tmp_path / "ref.jsonl")
        assert report.pqa == 1.0 and not report.pqa_degenerate

    def test_identity_no_question_targets_degenerate(self, tmp_path):
        refs = [{"id": "1", "target": "建议休息。"}]
        preds = [{"id": "1", "prediction": "建议休息。"}]
        write_jsonl(tmp_path / "ref.jsonl", refs)
        write_jsonl(tmp_path / "pred.jsonl", preds)
        report = evaluate(tmp_path / "pred.jsonl", tmp_path / "ref.jsonl")
        assert report.pqa == 0.0 and report.pqa_degenerate

    def test_missing_prediction_counted(self, tmp_path):
        refs = [{"id": str(i), "target": "建议休息。"} for i in range(3)]
        preds = [{"id": "0", "prediction": "建议休息。"}, {"id": "1", "prediction": "建议休息。"}]
        write_jsonl(tmp_path / "ref.jsonl", refs)
        write_jsonl(tmp_path / "pred.jsonl", preds)
        report = evaluate(tmp_path / "pred.jsonl", tmp_path / "ref.jsonl")
        assert report.sample_count == 2
        assert report.missing == 1

    def test_zero_matches_fatal(self, tmp_path):
        write_jsonl(tmp_path / "ref.jsonl", [{"id": "1", "target": "x"}])
        write_jsonl(tmp_path / "pred.jsonl", [])
        with pytest.raises(ValueError):
            evaluate(tmp_path / "pred.jsonl", tmp_path / "ref.jsonl")

    def test_hand_computed_fixture(self, tmp_path):
        """4-pair fixture checked against the brute-force oracles."""
        refs = {
            "1": "abcd",
            "2": "aabb",
            "3": "xyz",
            "4": "qq",
        }
        preds = {
            "1": "abcd",
            "2": "abab",
            "3": "xaz",
            "4": "q",
        }
        write_jsonl(
            tmp_path / "ref.jsonl", [{"id": k, "target": v} for k, v in refs.items()]
        )
        write_jsonl(
            tmp_path / "pred.jsonl",
            [{"id": k, "prediction": v} for k, v in preds.items()],
        )
        report = evaluate(tmp_path / "pred.jsonl", tmp_path / "ref.jsonl", tokenizer=list)
        expected_rl = sum(
            brute_rouge_l(list(preds[k]), list(refs[k]))[2] for k in refs
        ) / 4
        assert report.rouge_l == pytest.approx(expected_rl, abs=1e-9)
        expected_r1 = sum(
            brute_rouge_n(list(preds[k]), list(refs[k]), 1)[2] for k in refs
        ) / 4
        assert report.rouge_1 == pytest.approx(expected_r1, abs=1e-9)

    def test_table_shape(self, tmp_path):
        refs = [{"id": "1", "target": "建议休息。"}]
        preds = [{"id": "1", "prediction": "建议休息。"}]
        write_jsonl(tmp_path / "ref.jsonl", refs)
        write_jsonl(tmp_path / "pred.jsonl", preds)
        report = evaluate(
            tmp_path / "pred.jsonl", tmp_path / "ref.jsonl", dataset="demo", model="stub"
        )
        table = report.to_table()
        for col in ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "R-1", "R-2", "R-L", "PQA"]:
            assert col in table


class TestGeneration:
    def test_config_defaults(self):
        gen = GenerationConfig()
        assert gen.top_p == 0.75
        assert gen.temperature == 0.95

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            GenerationConfig(top_p=0.0)
        with pytest.raises(ValueError):
            GenerationConfig(temperature=0.0)

    def test_echo_stub_and_sampling_params(self, stub_llm, tmp_path):
        stub_llm.mode = "echo"
        client = LlmClient(
            LlmClientConfig(endpoint=stub_llm.endpoint, model="stub", requests_per_minute=0)
        )
        contexts = [("s1", "病人：咳嗽\n医生："), ("s2", "病人：头疼\n医生：")]
        out = tmp_path / "pred.jsonl"
        written, failed = generate_predictions(client, contexts, GenerationConfig(), out)
        assert (written, failed) == (2, 0)
        records = [json.loads(l) for l in out.read_text(encoding="utf-8").splitlines()]
        assert [r["prediction"] for r in records] == [c for _, c in contexts]
        for body in stub_llm.requests:
            assert body["top_p"] == 0.75
            assert body["temperature"] == 0.95

    def test_unreachable_endpoint_flags_failed(self, tmp_path):
        client = LlmClient(
            LlmClientConfig(
                endpoint="http://127.0.0.1:9",  # discard port: nothing listens
                model="stub",
                max_retries=0,
                backoff_base=0.0,
                timeout=0.5,
                requests_per_minute=0,
            )
        )
        out = tmp_path / "pred.jsonl"
        written, failed = generate_predictions(
            client, [("s1", "x"), ("s2", "y")], GenerationConfig(), out
        )
        assert (written, failed) == (2, 2)
        records = [json.loads(l) for l in out.read_text(encoding="utf-8").splitlines()]
        assert all(r["failed"] and r["prediction"] == "" for r in records)
