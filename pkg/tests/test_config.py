import json

import pytest

from extremeseg import config as cfgmod
from extremeseg.pipeline import PipelineConfig
from extremeseg.synth import SynthSpec


def test_defaults_carry_reference_values():
    cfg = cfgmod.pipeline_config({})
    assert cfg.eta_train == 0.01 and cfg.eta_finetune == 1e-4
    assert cfg.N == 100 and cfg.tau == 0.1 and cfg.finetune_iters == 100
    assert (cfg.simple.N, cfg.simple.lam, cfg.simple.alpha, cfg.simple.w) == (100, 0.96, 0.96, 0.1)
    assert (cfg.rw.fg_threshold, cfg.rw.bg_threshold, cfg.rw.n_iterations) == (0.8, 0.1, 7)


def test_round_trip():
    cfg = PipelineConfig(patch_dims=(16, 16, 8), epochs_train=3, seed=9)
    d = cfgmod.to_dict(cfg, SynthSpec(), {"n_train": 2, "n_test": 1})
    again = cfgmod.pipeline_config(json.loads(json.dumps(d)))
    assert cfgmod.to_dict(again) == cfgmod.to_dict(cfg)
    assert cfgmod.synth_spec(d) == SynthSpec()


def test_clinical_scale_values_are_accepted():
    d = {"patch_dims": [128, 128, 96], "arch": {"channels": [32, 64, 128, 256], "feature_dim": 32},
         "train": {"epochs": 200}, "retrain": {"epochs": 200}}
    cfg = cfgmod.pipeline_config(d)
    assert cfg.patch_dims == (128, 128, 96) and cfg.arch.levels == 4 and cfg.epochs_train == 200


@pytest.mark.parametrize("d", [{"train": {"epoch": 3}}, {"rw": {"gamma": 1}}, {"synth": {"size": 3}},
                               {"data": {"n": 1}}, {"finetune": {"lambda": 2.0}},
                               {"patch_dims": [31, 32, 16]}])
def test_invalid_config(d):
    with pytest.raises(ValueError):
        cfgmod.pipeline_config(d)
        cfgmod.synth_spec(d)
        cfgmod.data_settings(d)


def test_patch_dims_text():
    assert cfgmod.split_patch_dims("32,32,16") == (32, 32, 16)
    assert cfgmod.split_patch_dims("64x64x32") == (64, 64, 32)
    with pytest.raises(ValueError):
        cfgmod.split_patch_dims("32,32")
