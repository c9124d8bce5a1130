"""Run configuration: table defaults, file parsing, hashing."""

import pytest

from rtdkit.config import (
    RunConfig, TASKS, default_config, load_config, parse_config_text,
    write_config,
)
from rtdkit.encoder import ConfigError


class TestDefaults:
    def test_pretrain_column(self):
        c = default_config("pretrain")
        assert c.learning_rate == 2e-4
        assert c.adam_eps == 1e-6
        assert c.adam_beta1 == 0.9
        assert c.adam_beta2 == 0.999
        assert c.lr_decay == "linear"
        assert c.warmup_steps == 10000
        assert c.mask_percent == 15.0
        assert c.generator_size == pytest.approx(1 / 3)
        assert c.attention_dropout == 0.1
        assert c.dropout == 0.1
        assert c.weight_decay == 0.01
        assert c.batch_size == 256
        assert c.train_steps == 1_000_000
        assert c.max_seq_length == 512

    @pytest.mark.parametrize("task,lr,batch,max_seq,stride", [
        ("ner", 5e-5, 32, 128, 0),
        ("re", 5e-5, 32, 128, 0),
        ("qa-squad", 3e-5, 16, 384, 128),
        ("qa-bioasq", 5e-6, 16, 384, 128),
    ])
    def test_finetune_columns(self, task, lr, batch, max_seq, stride):
        c = default_config(task)
        assert c.learning_rate == lr
        assert c.batch_size == batch
        assert c.max_seq_length == max_seq
        assert c.document_stride == stride
        assert c.layerwise_lr_decay == 0.8
        assert c.weight_decay == 0.0
        assert c.adam_eps == 1e-6
        assert c.lr_decay == "linear"
        assert c.train_epochs == 3
        assert c.warmup_steps is None   # derived: a tenth of total steps

    def test_unknown_task(self):
        with pytest.raises(ConfigError, match="unknown task"):
            default_config("qa")

    def test_mask_rate_property(self):
        assert default_config("pretrain").mask_rate == pytest.approx(0.15)

    def test_full_encoder_block_when_unset(self):
        enc = default_config("pretrain").encoder_config(vocab_size=30522)
        assert (enc.num_layers, enc.hidden, enc.ffn_inner) == (12, 768, 3072)
        assert (enc.heads, enc.head_size, enc.embedding_size) == (12, 64, 768)
        assert enc.vocab_size == 30522
        assert enc.max_positions == 512   # follows max_seq_length

    def test_encoder_block_overrides(self):
        from dataclasses import replace
        c = replace(default_config("pretrain"), num_layers=4, hidden=128,
                    ffn_inner=512, heads=4, head_size=32, embedding_size=128,
                    max_positions=64)
        enc = c.encoder_config(vocab_size=200)
        assert enc.num_layers == 4 and enc.hidden == 128
        assert enc.max_positions == 64


class TestValidation:
    def base(self, **kw):
        from dataclasses import replace
        return replace(default_config("pretrain"), **kw)

    def test_bad_lr_decay(self):
        with pytest.raises(ConfigError, match="lr_decay"):
            self.base(lr_decay="cosine")

    def test_nonpositive_lr(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            self.base(learning_rate=0.0)

    def test_dropout_range(self):
        with pytest.raises(ConfigError, match="dropout"):
            self.base(dropout=1.0)

    def test_stride_must_undershoot_window(self):
        with pytest.raises(ConfigError, match="document_stride"):
            self.base(document_stride=512)

    def test_mask_percent_range(self):
        with pytest.raises(ConfigError, match="mask_percent"):
            self.base(mask_percent=0.0)

    def test_negative_budget(self):
        with pytest.raises(ConfigError, match="train_steps"):
            self.base(train_steps=-1)


class TestParsing:
    def test_typed_values(self):
        got = parse_config_text(
            "learning_rate = 5e-4\nbatch_size = 32\nlr_decay = linear\n"
            "generator_size = 1/3\nwarmup_steps = none\n"
        )
        assert got == {
            "learning_rate": 5e-4, "batch_size": 32, "lr_decay": "linear",
            "generator_size": pytest.approx(1 / 3), "warmup_steps": None,
        }

    def test_comments_and_blanks(self):
        got = parse_config_text("# budget\n\nseed = 7\n")
        assert got == {"seed": 7}

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="line 1: unknown key 'learning_rte'"):
            parse_config_text("learning_rte = 5e-4\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate key"):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="expected 'key = value'"):
            parse_config_text("seed 1\n")

    def test_empty_value(self):
        with pytest.raises(ConfigError, match="empty value"):
            parse_config_text("seed =\n")

    def test_unparseable_value(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            parse_config_text("batch_size = many\n")


class TestLoading:
    def test_file_overrides_column(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("task = ner\nlearning_rate = 1e-4\nseed = 3\n")
        c = load_config(p)
        assert c.task == "ner"
        assert c.learning_rate == 1e-4
        assert c.seed == 3
        assert c.batch_size == 32   # untouched column value

    def test_task_argument_when_file_silent(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("seed = 1\n")
        assert load_config(p, task="re").task == "re"

    def test_overrides_beat_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("task = ner\nseed = 1\n")
        c = load_config(p, overrides={"seed": 9})
        assert c.seed == 9

    def test_none_override_ignored(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("task = ner\nseed = 4\n")
        assert load_config(p, overrides={"seed": None}).seed == 4

    def test_unknown_override(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("task = ner\n")
        with pytest.raises(ConfigError, match="unknown config override"):
            load_config(p, overrides={"learning_rte": 1.0})

    def test_write_then_load_round_trip(self, tmp_path):
        c = default_config("qa-squad")
        p = tmp_path / "run.cfg"
        write_config(p, c)
        assert load_config(p) == c

    def test_round_trip_with_encoder_block(self, tmp_path):
        from dataclasses import replace
        c = replace(default_config("pretrain"), num_layers=4, hidden=128,
                    ffn_inner=512, heads=4, head_size=32, embedding_size=128,
                    train_steps=2000, seed=11)
        p = tmp_path / "run.cfg"
        write_config(p, c)
        assert load_config(p) == c


class TestHash:
    def test_stable_and_sensitive(self):
        a = default_config("ner")
        b = default_config("ner")
        assert a.config_hash() == b.config_hash()
        assert len(a.config_hash()) == 64
        from dataclasses import replace
        assert replace(a, seed=1).config_hash() != a.config_hash()

    def test_differs_across_tasks(self):
        assert {default_config(t).config_hash() for t in TASKS} == {
            default_config(t).config_hash() for t in TASKS
        }
        assert len({default_config(t).config_hash() for t in TASKS}) == len(TASKS)

    def test_survives_file_round_trip(self, tmp_path):
        c = default_config("qa-bioasq")
        p = tmp_path / "run.cfg"
        write_config(p, c)
        assert load_config(p).config_hash() == c.config_hash()
