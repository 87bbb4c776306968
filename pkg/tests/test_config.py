import pytest

from voicetitles import config as C


def test_bertsum_published_schedule():
    s = C.settings_for("bertsum")
    assert (s["lr_e"], s["lr_d"], s["warmup_e"], s["warmup_d"]) == (2e-3, 0.2, 20000, 10000)


def test_ebertsum_published_schedule():
    s = C.settings_for("ebertsum")
    assert (s["lr_e"], s["lr_d"], s["warmup_e"], s["warmup_d"]) == (2e-4, 0.1, 2000, 10000)


def test_published_training_and_decoding_settings():
    for family in ("transformer", "bertsum", "ebertsum"):
        s = C.settings_for(family)
        assert (s["batch_size"], s["total_steps"], s["checkpoint_every"]) == (256, 35000, 2000)
        assert (s["beam"], s["alpha"], s["min_len"], s["max_len"]) == (5, 0.95, 4, 50)
    s = C.settings_for("ebertsum")
    assert (s["hidden"], s["dec_layers"]) == (768, 8)
    assert (s["pretrain_steps"], s["pretrain_lr"], s["pretrain_batch"]) == (200000, 2e-5, 32)
    t = C.settings_for("transformer")
    assert (t["hidden"], t["enc_layers"]) == (512, 6)


def test_recurrent_defaults():
    for family in C.RECURRENT:
        s = C.settings_for(family)
        assert (s["schedule"], s["lr_e"], s["lr_d"], s["clip_norm"]) == ("flat", 1e-3, 1e-3, 2.0)
        assert "pretrain_steps" not in s and "heads" not in s
    assert C.settings_for("ptrnet_cov")["coverage_steps"] > 0
    assert C.settings_for("ptrnet")["coverage_steps"] == 0


def test_clipping_only_for_recurrent_families():
    for family in ("transformer", "bertsum", "ebertsum"):
        assert C.train_config(C.settings_for(family)).clip_norm == 0.0


def test_desk_profile_shrinks():
    s = C.settings_for("ebertsum", "desk")
    assert (s["hidden"], s["heads"], s["ffn"], s["enc_layers"], s["dec_layers"]) == (64, 4, 128, 2, 2)
    assert (s["batch_size"], s["total_steps"]) == (16, 2000)
    assert s["pretrain_steps"] == 2000


def test_overrides_apply_and_coerce():
    s = C.settings_for("bertsum", "desk", {"hidden": "32", "lr_e": "1e-3", "total_steps": "1e3"})
    assert s["hidden"] == 32 and s["lr_e"] == 1e-3 and s["total_steps"] == 1000


@pytest.mark.parametrize("family,profile,overrides,match", [
    ("lstm", "paper", {}, "unknown model family"),
    ("bertsum", "huge", {}, "unknown profile"),
    ("seq2seq", "paper", {"heads": 4}, "does not apply"),
    ("bertsum", "paper", {"hidden": "big"}, "bad value"),
    ("bertsum", "paper", {"nonsense": 1}, "unknown config key"),
])
def test_config_errors(family, profile, overrides, match):
    with pytest.raises(C.ConfigError, match=match):
        C.settings_for(family, profile, overrides)


@pytest.mark.parametrize("family", C.FAMILIES)
@pytest.mark.parametrize("profile", C.PROFILES)
def test_settings_round_trip_through_printer(family, profile):
    s = C.settings_for(family, profile, {"seed": 5})
    assert C.parse_settings(C.format_settings(s)) == s


def test_parse_settings_skips_comments_and_reports_lines():
    assert C.parse_settings("# note\n\nbeam = 3\n") == {"beam": 3}
    with pytest.raises(C.ConfigError, match="line 2"):
        C.parse_settings("beam=3\nnot a setting\n")


def test_builders_accept_every_family():
    for family in C.FAMILIES:
        s = C.settings_for(family, "desk")
        assert C.train_config(s).family == family
        if family in C.RECURRENT:
            assert C.recurrent_config(s).hidden == 64
        else:
            assert C.layer_config(s).hidden == 64
