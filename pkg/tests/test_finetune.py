"""Fine-tuning: recipes, the shared loop, per-task training, persistence."""

import json

import numpy as np
import pytest

from rtdkit import synthetic as syn
from rtdkit.checkpoint import save_checkpoint
from rtdkit.data import DataError, NerExample, QaQuestion, ReExample
from rtdkit.encoder import ConfigError, init_params
from rtdkit.finetune import (
    RECIPES,
    TASKS,
    Recipe,
    evaluate_ner,
    evaluate_qa,
    evaluate_re,
    finetune,
    load_model,
    predict_ner,
    predict_qa,
    predict_re,
    read_qa_predictions,
    read_re_predictions,
    save_model,
    task_recipe,
    train_ner,
    train_qa,
    train_re,
    write_ner_predictions,
    write_qa_predictions,
    write_re_predictions,
)
from rtdkit.heads import NBestList, SpanPrediction
from rtdkit.metrics import PrfReport, entity_prf, extract_chunks
from rtdkit.optim import TrainingError
from rtdkit.pretraining import export_discriminator
from rtdkit.rng import INIT, stream_rng

VOCAB = syn.desk_vocab()
CFG = syn.desk_config(
    num_layers=2, hidden=32, ffn_inner=64, heads=2, head_size=16,
    embedding_size=32, max_positions=64,
)
INIT_PARAMS = init_params(CFG, stream_rng(7, INIT))

FAST_NER = Recipe(learning_rate=1e-3, batch_size=16, max_seq_length=32, epochs=3)
FAST_RE = Recipe(learning_rate=2e-3, batch_size=16, max_seq_length=16, epochs=3)
FAST_QA = Recipe(
    learning_rate=1e-3, batch_size=16, max_seq_length=24, document_stride=8, epochs=3
)


class TestRecipes:
    def test_published_hyperparameters(self):
        ner = RECIPES["ner"]
        assert (ner.learning_rate, ner.batch_size, ner.max_seq_length) == (5e-5, 32, 128)
        re_ = RECIPES["re"]
        assert (re_.learning_rate, re_.batch_size, re_.max_seq_length) == (5e-5, 32, 128)
        squad = RECIPES["qa-squad"]
        assert (squad.learning_rate, squad.batch_size) == (3e-5, 16)
        assert (squad.max_seq_length, squad.document_stride) == (384, 128)
        bioasq = RECIPES["qa-bioasq"]
        assert (bioasq.learning_rate, bioasq.batch_size) == (5e-6, 16)
        assert (bioasq.max_seq_length, bioasq.document_stride) == (384, 128)

    def test_shared_defaults(self):
        for recipe in RECIPES.values():
            assert recipe.epochs == 3
            assert recipe.warmup_fraction == 0.1
            assert recipe.layerwise_lr_decay == 0.8
            assert recipe.adam_eps == 1e-6
            assert (recipe.adam_beta1, recipe.adam_beta2) == (0.9, 0.999)
            assert recipe.weight_decay == 0.0

    def test_task_recipe_overrides(self):
        r = task_recipe("ner", epochs=5, learning_rate=1e-3)
        assert r.epochs == 5 and r.learning_rate == 1e-3
        assert r.batch_size == RECIPES["ner"].batch_size
        assert task_recipe("ner") is RECIPES["ner"]

    def test_task_recipe_none_keeps_default(self):
        assert task_recipe("re", epochs=None).epochs == 3

    def test_unknown_task_or_field(self):
        with pytest.raises(ValueError, match="unknown task"):
            task_recipe("parsing")
        with pytest.raises(ValueError, match="unknown recipe field"):
            task_recipe("ner", momentum=0.9)

    def test_validation(self):
        with pytest.raises(ValueError, match="learning rate"):
            Recipe(learning_rate=0.0, batch_size=8, max_seq_length=32)
        with pytest.raises(ValueError, match="at least 1"):
            Recipe(learning_rate=1e-4, batch_size=0, max_seq_length=32)
        with pytest.raises(ValueError, match="warmup"):
            Recipe(learning_rate=1e-4, batch_size=8, max_seq_length=32, warmup_fraction=1.0)
        with pytest.raises(ValueError, match="layerwise"):
            Recipe(learning_rate=1e-4, batch_size=8, max_seq_length=32, layerwise_lr_decay=0.0)


class TestLoopMechanics:
    def small(self, n=40):
        return syn.ner_corpus(n, seed=3)

    def test_same_seed_bitwise(self):
        recipe = task_recipe("ner", learning_rate=1e-3, batch_size=8, epochs=1,
                             max_seq_length=32)
        a, _ = train_ner(self.small(), VOCAB, INIT_PARAMS, CFG, recipe=recipe, seed=5)
        b, _ = train_ner(self.small(), VOCAB, INIT_PARAMS, CFG, recipe=recipe, seed=5)
        assert a.params.keys() == b.params.keys()
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data), name

    def test_different_seed_differs(self):
        recipe = task_recipe("ner", learning_rate=1e-3, batch_size=8, epochs=1,
                             max_seq_length=32)
        a, _ = train_ner(self.small(), VOCAB, INIT_PARAMS, CFG, recipe=recipe, seed=5)
        b, _ = train_ner(self.small(), VOCAB, INIT_PARAMS, CFG, recipe=recipe, seed=6)
        assert any(
            not np.array_equal(a.params[n].data, b.params[n].data) for n in a.params
        )

    def test_init_params_untouched(self):
        before = {n: p.data.copy() for n, p in INIT_PARAMS.items()}
        recipe = task_recipe("ner", learning_rate=1e-2, batch_size=8, epochs=1,
                             max_seq_length=32)
        train_ner(self.small(), VOCAB, INIT_PARAMS, CFG, recipe=recipe, seed=0)
        for name, data in before.items():
            assert np.array_equal(INIT_PARAMS[name].data, data), name

    def test_metrics_jsonl_matches(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        recipe = task_recipe("ner", learning_rate=1e-3, batch_size=8, epochs=2,
                             max_seq_length=32)
        _, metrics = train_ner(
            self.small(), VOCAB, INIT_PARAMS, CFG,
            recipe=recipe, seed=0, log_every=2, metrics_path=path,
        )
        on_disk = [json.loads(line) for line in path.read_text().splitlines()]
        assert on_disk == metrics
        steps_per_epoch = -(-len(syn.ner_corpus(40, seed=3)) // 8)
        assert metrics[-1]["step"] == steps_per_epoch * 2
        assert {"step", "epoch", "lr", "loss"} <= set(metrics[0])

    def test_warmup_is_tenth_of_total(self):
        # 40 examples, batch 8, 2 epochs -> 10 steps, warmup 1: peak lr at step 1
        recipe = task_recipe("ner", learning_rate=1e-3, batch_size=8, epochs=2,
                             max_seq_length=32)
        _, metrics = train_ner(
            self.small(), VOCAB, INIT_PARAMS, CFG, recipe=recipe, seed=0, log_every=1
        )
        lrs = [m["lr"] for m in metrics]
        assert lrs[0] == pytest.approx(1e-3)
        for a, b in zip(lrs, lrs[1:]):
            assert b < a
        assert lrs[-1] == pytest.approx(0.0)

    def test_layerwise_first_step(self):
        # one step: the head moves identically under decay 1.0 and 0.8,
        # the embeddings move less under 0.8
        ex = self.small(8)
        runs = {}
        for decay in (1.0, 0.8):
            recipe = Recipe(learning_rate=1e-3, batch_size=8, max_seq_length=32,
                            epochs=1, layerwise_lr_decay=decay)
            model, _ = train_ner(ex, VOCAB, INIT_PARAMS, CFG, recipe=recipe, seed=0)
            runs[decay] = model.params
        head_a = runs[1.0]["head/ner/weight"].data
        head_b = runs[0.8]["head/ner/weight"].data
        assert np.array_equal(head_a, head_b)
        emb0 = INIT_PARAMS["encoder/embeddings/token"].data
        move_full = np.abs(runs[1.0]["encoder/embeddings/token"].data - emb0).sum()
        move_decayed = np.abs(runs[0.8]["encoder/embeddings/token"].data - emb0).sum()
        assert move_decayed < move_full

    def test_nonfinite_loss_names_step(self):
        poisoned = {
            n: type(p)(p.data.copy(), n, no_decay=p.no_decay)
            for n, p in INIT_PARAMS.items()
        }
        poisoned["encoder/embeddings/token"].data[0, 0] = np.nan
        recipe = task_recipe("ner", epochs=1, batch_size=8, max_seq_length=32)
        with pytest.raises(TrainingError, match="step 1"):
            train_ner(self.small(), VOCAB, poisoned, CFG, recipe=recipe, seed=0)

    def test_vocab_config_mismatch(self):
        small_cfg = syn.desk_config(
            num_layers=2, hidden=32, ffn_inner=64, heads=2, head_size=16,
            embedding_size=32, vocab_size=150,
        )
        with pytest.raises(ConfigError, match="vocab"):
            train_ner(self.small(), VOCAB, INIT_PARAMS, small_cfg, recipe=FAST_NER)

    def test_init_without_encoder_rejected(self):
        with pytest.raises(ValueError, match="encoder weights"):
            train_ner(self.small(), VOCAB, {}, CFG, recipe=FAST_NER)


class TestNerTask:
    def test_learns_lexical_patterns(self):
        train = syn.ner_corpus(1000, seed=0)
        test = syn.ner_corpus(60, seed=1)
        model, metrics = train_ner(
            train, VOCAB, INIT_PARAMS, CFG, recipe=FAST_NER, seed=0, log_every=1000
        )
        pred = predict_ner(model, test, VOCAB, max_seq_length=32)
        report = evaluate_ner(test, pred)
        assert report.f1 >= 95.0
        assert metrics[-1]["loss"] < 0.3

    def test_prediction_shape_and_tagset(self):
        train = syn.ner_corpus(40, seed=0)
        test = syn.ner_corpus(10, seed=1)
        recipe = task_recipe("ner", learning_rate=1e-3, batch_size=8, epochs=1,
                             max_seq_length=32)
        model, _ = train_ner(train, VOCAB, INIT_PARAMS, CFG, recipe=recipe, seed=0)
        pred = predict_ner(model, test, VOCAB, max_seq_length=32)
        assert len(pred) == len(test)
        for ex, tags in zip(test, pred):
            assert len(tags) == len(ex.tokens)
            assert set(tags) <= set(model.tagset.tags)

    def test_predict_empty(self):
        model, _ = train_ner(
            syn.ner_corpus(16, seed=0), VOCAB, INIT_PARAMS, CFG,
            recipe=task_recipe("ner", epochs=1, batch_size=8, max_seq_length=32), seed=0,
        )
        assert predict_ner(model, [], VOCAB) == []

    def test_evaluate_matches_entity_prf(self):
        gold = syn.ner_corpus(12, seed=2)
        pred = [list(e.tags) for e in gold]
        pred[0] = ["O"] * len(pred[0])
        report = evaluate_ner(gold, pred)
        direct = entity_prf(
            [extract_chunks(e.tags) for e in gold],
            [extract_chunks(t) for t in pred],
        )
        assert report == direct

    def test_wrong_example_type(self):
        with pytest.raises(DataError, match="task ner expects"):
            train_ner(
                [ReExample("x", "a b", "none")], VOCAB, INIT_PARAMS, CFG, recipe=FAST_NER
            )

    def test_empty_dataset(self):
        with pytest.raises(DataError, match="empty"):
            train_ner([], VOCAB, INIT_PARAMS, CFG, recipe=FAST_NER)


class TestReTask:
    def test_learns_marker_rule(self):
        train = syn.re_corpus(800, seed=0)
        test = syn.re_corpus(120, seed=1)
        model, _ = train_re(
            train, VOCAB, INIT_PARAMS, CFG, syn.RE_TOY_LABELS,
            recipe=FAST_RE, seed=0, log_every=1000,
        )
        pred = predict_re(model, test, VOCAB, max_seq_length=16)
        report = evaluate_re(test, pred, syn.RE_TOY_LABELS)
        assert report.f1 >= 95.0

    def test_predictions_from_label_set(self):
        train = syn.re_corpus(40, seed=0)
        recipe = task_recipe("re", learning_rate=1e-3, batch_size= 8, epochs=1,
                             max_seq_length=16)
        model, _ = train_re(train, VOCAB, INIT_PARAMS, CFG, syn.RE_TOY_LABELS,
                            recipe=recipe, seed=0)
        pred = predict_re(model, train, VOCAB, max_seq_length=16)
        assert len(pred) == len(train)
        assert set(pred) <= set(syn.RE_TOY_LABELS.labels)

    def test_unknown_label_rejected(self):
        bad = [ReExample("x", "enta w000 entb", "rel:9")]
        with pytest.raises(DataError, match="rel:9"):
            train_re(bad, VOCAB, INIT_PARAMS, CFG, syn.RE_TOY_LABELS, recipe=FAST_RE)

    def test_wrong_example_type(self):
        with pytest.raises(DataError, match="task re expects"):
            train_re(
                syn.ner_corpus(4, seed=0), VOCAB, INIT_PARAMS, CFG, syn.RE_TOY_LABELS,
                recipe=FAST_RE,
            )


class TestQaTask:
    def test_learns_span_with_striding(self):
        train = syn.qa_corpus(600, seed=0)
        test = syn.qa_corpus(90, seed=1)
        model, _ = train_qa(
            train, VOCAB, INIT_PARAMS, CFG, recipe=FAST_QA, seed=0, log_every=1000
        )
        nbest = predict_qa(model, test, VOCAB, max_seq_length=24, document_stride=8)
        report = evaluate_qa(test, nbest)
        assert report.sacc >= 90.0
        assert report.sacc <= report.mrr <= report.lacc

    def test_nbest_lists_shape(self):
        train = syn.qa_corpus(30, seed=0)
        recipe = task_recipe("qa-squad", learning_rate=1e-3, batch_size=8, epochs=1,
                             max_seq_length=24, document_stride=8)
        model, _ = train_qa(train, VOCAB, INIT_PARAMS, CFG, recipe=recipe, seed=0)
        nbest = predict_qa(model, train, VOCAB, max_seq_length=24, document_stride=8)
        assert set(nbest) == {q.id for q in train}
        for lst in nbest.values():
            assert isinstance(lst, NBestList)
            assert len(lst.predictions) <= 5

    def test_second_stage_reuses_head(self):
        train = syn.qa_corpus(30, seed=0)
        recipe = task_recipe("qa-squad", learning_rate=1e-3, batch_size=8, epochs=1,
                             max_seq_length=24, document_stride=8)
        stage1, _ = train_qa(train, VOCAB, INIT_PARAMS, CFG, recipe=recipe, seed=0)
        tiny = task_recipe("qa-bioasq", learning_rate=1e-12, batch_size=8, epochs=1,
                           max_seq_length=24, document_stride=8)
        stage2, _ = train_qa(train, VOCAB, stage1.params, CFG, recipe=tiny, seed=1)
        fresh, _ = train_qa(train, VOCAB, INIT_PARAMS, CFG, recipe=tiny, seed=1)
        w1 = stage1.params["head/qa/start/weight"].data
        w2 = stage2.params["head/qa/start/weight"].data
        assert np.allclose(w1, w2, atol=1e-6)
        assert not np.allclose(fresh.params["head/qa/start/weight"].data, w1, atol=1e-6)

    def test_wrong_example_type(self):
        with pytest.raises(DataError, match="task qa expects"):
            train_qa([NerExample(("a",), ("O",))], VOCAB, INIT_PARAMS, CFG, recipe=FAST_QA)

    def test_evaluate_accepts_plain_lists(self):
        qs = syn.qa_corpus(2, seed=0)
        answers = {qs[0].id: [qs[0].synonyms[0]], qs[1].id: ["wrong"]}
        report = evaluate_qa(qs, answers)
        assert report.sacc == pytest.approx(50.0)


class TestPersistence:
    def trained(self, task):
        if task == "ner":
            model, _ = train_ner(
                syn.ner_corpus(16, seed=0), VOCAB, INIT_PARAMS, CFG,
                recipe=task_recipe("ner", epochs=1, batch_size=8, max_seq_length=32),
            )
        elif task == "re":
            model, _ = train_re(
                syn.re_corpus(16, seed=0), VOCAB, INIT_PARAMS, CFG, syn.RE_TOY_LABELS,
                recipe=task_recipe("re", epochs=1, batch_size=8, max_seq_length=16),
            )
        else:
            model, _ = train_qa(
                syn.qa_corpus(8, seed=0), VOCAB, INIT_PARAMS, CFG,
                recipe=task_recipe(task, learning_rate=1e-3, epochs=1, batch_size=8,
                                   max_seq_length=24, document_stride=8),
            )
        return model

    @pytest.mark.parametrize("task", TASKS)
    def test_round_trip(self, task, tmp_path):
        model = self.trained(task)
        path = tmp_path / f"{task}.ckpt"
        save_model(path, model, task, seed=3, step=11)
        task_back, back = load_model(path)
        assert task_back == task
        assert back.config == model.config
        assert back.params.keys() == model.params.keys()
        for name in model.params:
            assert np.array_equal(back.params[name].data, model.params[name].data)
        if task == "ner":
            assert back.tagset.tags == model.tagset.tags
        if task == "re":
            assert back.label_set == model.label_set

    def test_rejects_pretrain_checkpoint(self, tmp_path):
        path = tmp_path / "disc.ckpt"
        export_discriminator(path, INIT_PARAMS, CFG, step=0, seed=0)
        with pytest.raises(ValueError, match="not a fine-tuned model"):
            load_model(path)

    def test_rejects_missing_task_tag(self, tmp_path):
        path = tmp_path / "bare.ckpt"
        save_checkpoint(
            path, INIT_PARAMS, encoder_config=CFG, component="task-head"
        )
        with pytest.raises(ValueError, match="task tag"):
            load_model(path)

    def test_unknown_task_on_save(self, tmp_path):
        model = self.trained("ner")
        with pytest.raises(ValueError, match="unknown task"):
            save_model(tmp_path / "x.ckpt", model, "parsing")


class TestFinetuneOrchestration:
    def test_multiple_seeds_with_reports(self, tmp_path):
        train = syn.ner_corpus(60, seed=0)
        test = syn.ner_corpus(20, seed=1)
        recipe = task_recipe("ner", learning_rate=1e-3, batch_size=16, epochs=1,
                             max_seq_length=32)
        out = finetune(
            "ner", INIT_PARAMS, CFG, VOCAB, train, test,
            seeds=2, recipe=recipe, metrics_dir=tmp_path,
        )
        assert out.task == "ner"
        assert [r.seed for r in out.runs] == [0, 1]
        assert all(isinstance(r.report, PrfReport) for r in out.runs)
        assert out.aggregate["count"] == 2
        assert "f1" in out.aggregate and "f1_of_means" in out.aggregate
        assert (tmp_path / "seed-0-metrics.jsonl").exists()
        assert (tmp_path / "seed-1-metrics.jsonl").exists()
        a, b = out.runs
        assert any(
            not np.array_equal(a.model.params[n].data, b.model.params[n].data)
            for n in a.model.params
        )

    def test_no_eval_data_no_aggregate(self):
        train = syn.re_corpus(24, seed=0)
        recipe = task_recipe("re", epochs=1, batch_size=8, max_seq_length=16)
        out = finetune(
            "re", INIT_PARAMS, CFG, VOCAB, train,
            label_set=syn.RE_TOY_LABELS, seeds=[7], recipe=recipe,
        )
        assert out.runs[0].seed == 7
        assert out.runs[0].report is None
        assert out.aggregate is None

    def test_qa_stage_list(self):
        train = syn.qa_corpus(8, seed=0)
        recipe = task_recipe("qa-bioasq", learning_rate=1e-4, epochs=1, batch_size=8,
                             max_seq_length=24, document_stride=8)
        out = finetune("qa-bioasq", INIT_PARAMS, CFG, VOCAB, train, train,
                       seeds=1, recipe=recipe)
        assert out.runs[0].report is not None
        assert out.aggregate["count"] == 1

    def test_errors(self):
        train = syn.re_corpus(8, seed=0)
        with pytest.raises(ValueError, match="unknown task"):
            finetune("parsing", INIT_PARAMS, CFG, VOCAB, train)
        with pytest.raises(ValueError, match="label_set"):
            finetune("re", INIT_PARAMS, CFG, VOCAB, train)
        with pytest.raises(ValueError, match="no seeds"):
            finetune("re", INIT_PARAMS, CFG, VOCAB, train,
                     label_set=syn.RE_TOY_LABELS, seeds=[])
        with pytest.raises(DataError, match="task ner expects"):
            finetune("ner", INIT_PARAMS, CFG, VOCAB, train)


class TestPredictionFiles:
    def test_ner_round_trip(self, tmp_path):
        from rtdkit.data import read_conll

        examples = syn.ner_corpus(5, seed=0)
        pred = [list(e.tags) for e in examples]
        path = tmp_path / "pred.conll"
        write_ner_predictions(path, examples, pred)
        back = read_conll(path)
        assert [list(e.tags) for e in back] == pred
        assert [e.tokens for e in back] == [e.tokens for e in examples]

    def test_ner_length_mismatch(self, tmp_path):
        with pytest.raises(ValueError, match="sentences"):
            write_ner_predictions(tmp_path / "x", syn.ner_corpus(2, seed=0), [["O"]])

    def test_re_round_trip(self, tmp_path):
        path = tmp_path / "pred.tsv"
        write_re_predictions(path, ["a", "b"], ["rel:1", "none"])
        assert read_re_predictions(path) == [("a", "rel:1"), ("b", "none")]

    def test_re_malformed_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("a\trel:1\textra\n")
        with pytest.raises(DataError, match="line 1"):
            read_re_predictions(path)

    def test_qa_round_trip_and_cap(self, tmp_path):
        path = tmp_path / "pred.json"
        nbest = NBestList(
            question_id="q1",
            predictions=tuple(
                SpanPrediction(f"t{i}", 9.0 - i, 0.0, 0, "q1_001") for i in range(7)
            ),
        )
        write_qa_predictions(path, {"q1": nbest, "q2": ["x", "y"]})
        back = read_qa_predictions(path)
        assert back["q1"] == [f"t{i}" for i in range(5)]
        assert back["q2"] == ["x", "y"]

    def test_qa_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(DataError, match="not valid JSON"):
            read_qa_predictions(path)
        path.write_text('["a"]')
        with pytest.raises(DataError, match="object"):
            read_qa_predictions(path)
        path.write_text('{"q": "notalist"}')
        with pytest.raises(DataError, match="string list"):
            read_qa_predictions(path)