import dataclasses
import os

import numpy as np
import pytest
import torch

from retinev.config import (ConfigError, DataConfig, RunConfig, TrainConfig,
                            load_run_config)
from retinev.degrade import DegradationConfig
from retinev.evaluation import build_synthetic_benchmark
from retinev.losses import FeaturePyramid
from retinev.model import ModelConfig, RetinevModel
from retinev.train import (cosine_lr, load_checkpoint, model_from_checkpoint,
                           pretrain_denoiser, save_checkpoint, train_main)

TINY_MODEL = ModelConfig(denoiser_width=4, mlp_hidden=4, decom_width=8,
                         ire_channels=8, ire_heads=2, ire_blocks=1)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("train_data")
    build_synthetic_benchmark(out, n=4, size=48, seed=3)
    return out


def tiny_config(dataset, **train_kw):
    defaults = dict(patch_size=16, batch_size=2, iters_pretrain=3, iters_main=4,
                    checkpoint_every=2, seed=7)
    defaults.update(train_kw)
    return RunConfig(
        data=DataConfig(train_dir=str(dataset), test_dir=str(dataset)),
        lldm=DegradationConfig(seed=7),
        model=TINY_MODEL,
        train=TrainConfig(**defaults),
    )


class TestCosineLr:
    def test_endpoints(self):
        assert cosine_lr(0, 1000, 2e-4, 1e-7) == pytest.approx(2e-4)
        assert cosine_lr(1000, 1000, 2e-4, 1e-7) == pytest.approx(1e-7)

    def test_midpoint(self):
        mid = cosine_lr(500, 1000, 2e-4, 1e-7)
        assert mid == pytest.approx((2e-4 + 1e-7) / 2)

    def test_monotone_non_increasing(self):
        lrs = [cosine_lr(i, 200, 2e-4, 1e-7) for i in range(201)]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))


class TestConfigLoading:
    def test_toml_round_trip(self, tmp_path, dataset):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text(
            "[data]\n"
            f'train_dir = "{dataset}"\n'
            "[train]\n"
            "patch_size = 16\nseed = 5\n"
            "[model]\n"
            "ire_heads = 2\nire_channels = 8\n"
            "[lldm]\n"
            "blur_sigma_range = [0.0, 1.0]\n"
            "[loss]\n"
            "lambda2 = 0.25\n")
        cfg = load_run_config(cfg_file)
        assert cfg.train.patch_size == 16 and cfg.train.seed == 5
        assert cfg.model.ire_heads == 2
        assert cfg.lldm.blur_sigma_range == (0.0, 1.0)
        assert cfg.loss.lambda2 == 0.25

    def test_unknown_field_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text("[train]\nbogus = 1\n")
        with pytest.raises(ConfigError, match="train.bogus"):
            load_run_config(cfg_file)

    def test_overrides_beat_file(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text("[train]\nseed = 5\n")
        cfg = load_run_config(cfg_file, overrides={"train": {"seed": 9}})
        assert cfg.train.seed == 9

    def test_env_seed_lowest_precedence(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RETINEV_SEED", "123")
        cfg = load_run_config()
        assert cfg.train.seed == 123 and cfg.lldm.seed == 123
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text("[train]\nseed = 5\n")
        cfg = load_run_config(cfg_file)
        assert cfg.train.seed == 5

    def test_hash_ignores_data_paths(self, dataset):
        a = tiny_config(dataset)
        b = dataclasses.replace(a, data=DataConfig(train_dir="/elsewhere"))
        c = dataclasses.replace(a, train=dataclasses.replace(a.train, seed=99))
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()


class TestCheckpointIO:
    def test_save_load_round_trip(self, tmp_path, dataset):
        cfg = tiny_config(dataset)
        torch.manual_seed(0)
        model = RetinevModel(cfg.model)
        opt = torch.optim.Adam(model.parameters())
        from retinev.train import _make_checkpoint
        ckpt = _make_checkpoint(cfg, model, opt, 5, "main")
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path, expected_hash=cfg.config_hash())
        assert loaded["iteration"] == 5 and loaded["stage"] == "main"
        for k, v in ckpt["model_state"].items():
            assert torch.equal(loaded["model_state"][k], v)

    def test_save_is_byte_stable(self, tmp_path, dataset):
        cfg = tiny_config(dataset)
        torch.manual_seed(0)
        model = RetinevModel(cfg.model)
        from retinev.train import _make_checkpoint
        ckpt = _make_checkpoint(cfg, model, None, 0, "main")
        # the serialized archive embeds its file name, so byte stability
        # holds for same-named files in different directories
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        save_checkpoint(ckpt, tmp_path / "a" / "m.ckpt")
        save_checkpoint(ckpt, tmp_path / "b" / "m.ckpt")
        assert ((tmp_path / "a" / "m.ckpt").read_bytes()
                == (tmp_path / "b" / "m.ckpt").read_bytes())

    def test_truncated_file_rejected(self, tmp_path, dataset):
        cfg = tiny_config(dataset)
        torch.manual_seed(0)
        from retinev.train import _make_checkpoint
        ckpt = _make_checkpoint(cfg, RetinevModel(cfg.model), None, 0, "main")
        path = tmp_path / "t.ckpt"
        save_checkpoint(ckpt, path)
        path.write_bytes(path.read_bytes()[:100])
        with pytest.raises(ValueError, match="corrupt"):
            load_checkpoint(path)

    def test_hash_mismatch_rejected(self, tmp_path, dataset):
        cfg = tiny_config(dataset)
        torch.manual_seed(0)
        from retinev.train import _make_checkpoint
        ckpt = _make_checkpoint(cfg, RetinevModel(cfg.model), None, 0, "main")
        path = tmp_path / "t.ckpt"
        save_checkpoint(ckpt, path)
        other = tiny_config(dataset, seed=99)
        with pytest.raises(ValueError, match="different config"):
            load_checkpoint(path, expected_hash=other.config_hash())


class TestPretrain:
    def test_loss_decreases_on_held_out_batch(self, dataset, tmp_path):
        from retinev.events import SensorConstants
        from retinev.train import _ImageCache, _denoiser_pair

        cfg = tiny_config(dataset, iters_pretrain=60)
        log = tmp_path / "pre.txt"
        ckpt = pretrain_denoiser(cfg, log_file=log)
        assert ckpt["stage"] == "pretrain"
        assert len(log.read_text().splitlines()) == 60

        # fixed evaluation batch from sample indices the run never touched
        cache = _ImageCache()
        sensor = SensorConstants()
        pairs = [_denoiser_pair(cfg, sorted((dataset / "high").iterdir()), cache,
                                10_000 + i, sensor) for i in range(16)]
        x = torch.from_numpy(np.stack([p[0] for p in pairs]))
        y = torch.from_numpy(np.stack([p[1] for p in pairs]))

        trained = model_from_checkpoint(ckpt)
        torch.manual_seed(cfg.train.seed)
        fresh = RetinevModel(cfg.model).eval()
        with torch.no_grad():
            loss_before = float(torch.mean(torch.abs(fresh.t2i.denoiser(x) - y)))
            loss_after = float(torch.mean(torch.abs(trained.t2i.denoiser(x) - y)))
        assert loss_after < loss_before

    def test_deterministic(self, dataset):
        cfg = tiny_config(dataset, iters_pretrain=3)
        a = pretrain_denoiser(cfg)
        b = pretrain_denoiser(cfg)
        for k in a["model_state"]:
            assert torch.equal(a["model_state"][k], b["model_state"][k])


class TestTrainMain:
    def test_runs_and_logs(self, dataset, tmp_path):
        cfg = tiny_config(dataset)
        log = tmp_path / "loss.txt"
        ckpt = train_main(cfg, log_file=log, checkpoint_path=tmp_path / "m.ckpt")
        assert ckpt["stage"] == "main" and ckpt["iteration"] == 4
        lines = log.read_text().splitlines()
        assert len(lines) == 4
        assert all(len(line.split("\t")) == 5 for line in lines)
        assert (tmp_path / "m.ckpt").exists()

    def test_deterministic_across_runs(self, dataset):
        cfg = tiny_config(dataset)
        a = train_main(cfg)
        b = train_main(cfg)
        for k in a["model_state"]:
            assert torch.equal(a["model_state"][k], b["model_state"][k])

    def test_resume_matches_uninterrupted(self, dataset, tmp_path, monkeypatch):
        import retinev.train as T

        cfg = tiny_config(dataset, iters_main=4, checkpoint_every=2)
        # keep every periodic checkpoint instead of overwriting, so the
        # iteration-2 snapshot survives to play the role of an interruption
        real_save = T.save_checkpoint
        snapshots = {}

        def keep_all(ckpt, path):
            snap = tmp_path / f"it{ckpt['iteration']}.ckpt"
            snapshots[ckpt["iteration"]] = snap
            real_save(ckpt, snap)

        monkeypatch.setattr(T, "save_checkpoint", keep_all)
        full = T.train_main(cfg, checkpoint_path=tmp_path / "x.ckpt")
        assert sorted(snapshots) == [2, 4]
        resumed = T.train_main(cfg, init=load_checkpoint(snapshots[2]))
        for k in full["model_state"]:
            assert torch.equal(full["model_state"][k], resumed["model_state"][k])

    def test_init_from_pretrain_keeps_denoiser(self, dataset):
        cfg = tiny_config(dataset, iters_pretrain=2, iters_main=0)
        pre = pretrain_denoiser(cfg)
        out = train_main(cfg, init=pre)
        for k in pre["model_state"]:
            assert torch.equal(out["model_state"][k], pre["model_state"][k])

    def test_refuses_mismatched_config(self, dataset):
        cfg = tiny_config(dataset)
        pre = pretrain_denoiser(tiny_config(dataset, seed=99, iters_pretrain=1))
        with pytest.raises(ValueError, match="hash mismatch"):
            train_main(cfg, init=pre)

    def test_extractor_parameters_never_change(self, dataset):
        cfg = tiny_config(dataset, iters_main=2)
        before = [p.clone() for p in FeaturePyramid(seed=cfg.extractor_seed).parameters()]
        train_main(cfg)
        after = FeaturePyramid(seed=cfg.extractor_seed).parameters()
        for b, a in zip(before, after):
            assert torch.equal(b, a)

    def test_model_from_checkpoint_rebuilds_architecture(self, dataset):
        cfg = tiny_config(dataset, iters_main=1)
        ckpt = train_main(cfg)
        model = model_from_checkpoint(ckpt)
        assert not model.training
        assert model.cfg == cfg.model
