import pytest

from mdslab.config import (ConfigError, RunConfig, config_text, load_config,
                           parse_config)


def test_default_config_valid():
    rc = load_config("default")
    rc.validate()
    assert rc.radar.M_c == 128
    assert rc.stft.window == 128
    assert rc.norm_mode == "log1p_minmax"
    mc = rc.model_config()
    assert mc.n_tokens == 64
    assert mc.d_in == 128 * 128


def test_parse_overrides_and_comments():
    rc = parse_config("""
# comment line
radar.M_c = 32          # trailing comment
radar.F_s = 1e6
radar.N_theta = 32
stft.n_overlap = 29
stft.n_fft = 32
pipeline.n_res_s = 4
pipeline.n_res_theta = 4
model.n_emb = 16
model.n_heads = 2
model.n_blocks = 1
model.wd_exclude_ln_bias = true
train.k_fold = 2
""")
    assert rc.radar.M_c == 32
    assert rc.radar.F_s == 1e6
    assert rc.stft.window == 32          # forced to M_c
    assert rc.model.wd_exclude_ln_bias is True
    assert rc.train.k_fold == 2
    assert rc.model_config().n_tokens == 16
    # untouched keys keep their defaults
    assert rc.radar.f_c == 77e9
    assert rc.pipeline.cfar_train == 8


def test_parse_gap_keys():
    rc = parse_config("pipeline.gap_r = 1\npipeline.gap_theta = 7\n")
    assert rc.pipeline.cluster_gaps == (1, 2, 7)


def test_parse_errors():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("radar.bogus = 1\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("radar.M_c = 128\nradar.M_c = 64\n")
    with pytest.raises(ConfigError, match="expected"):
        parse_config("radar.M_c 128\n")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("radar.M_c = twelve\n")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("model.wd_exclude_ln_bias = maybe\n")


def test_cross_checks():
    # n_fft must match M_c
    with pytest.raises(ConfigError, match="n_fft"):
        parse_config("stft.n_fft = 64\n")
    # crop cannot exceed the angle axis
    with pytest.raises(ConfigError, match="crop"):
        parse_config("pipeline.n_res_theta = 300\n")
    # too much overlap means too few analysis frames
    with pytest.raises(ConfigError, match="frames"):
        parse_config("radar.K_frame = 1\n")
    with pytest.raises(ConfigError, match="pfa"):
        parse_config("pipeline.pfa = 2.0\n")
    with pytest.raises(ConfigError, match="norm_mode"):
        parse_config("stft.norm_mode = squash\n")
    with pytest.raises(ConfigError):
        parse_config("model.n_emb = 30\n")     # not divisible by heads
    with pytest.raises(ConfigError):
        parse_config("train.k_fold = 1\n")


def test_round_trip_through_text():
    rc = parse_config("radar.M_c = 32\nradar.F_s = 1e6\nradar.N_theta = 32\n"
                      "stft.n_overlap = 29\nstft.n_fft = 32\n"
                      "pipeline.n_res_s = 4\npipeline.n_res_theta = 4\n"
                      "model.n_emb = 16\nmodel.n_heads = 2\n"
                      "train.eta = 0.0005\n")
    text = config_text(rc)
    rc2 = parse_config(text)
    assert rc2 == rc
    # defaults round-trip too
    rc3 = RunConfig()
    assert parse_config(config_text(rc3)) == rc3


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "missing.cfg"))
    path = tmp_path / "ok.cfg"
    path.write_text("train.seed = 9\n")
    assert load_config(str(path)).train.seed == 9
