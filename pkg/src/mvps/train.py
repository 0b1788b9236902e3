"""Epoch loop: Adam over the five-term objective, checkpoints and a CSV log."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict

import numpy as np

from .autodiff import Adam, NonFiniteError, Tape
from .fields import FieldConfig, FieldPair, read_checkpoint, write_checkpoint
from .loss import TERMS, LossConfig, make_batch, prepare_views, total_loss

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch",) + TERMS + ("total", "beta", "alpha")


class TrainingAborted(RuntimeError):
    pass


def pick_light(cfg: LossConfig, n_lights: int) -> int:
    if cfg.light_index is not None:
        if not 0 <= cfg.light_index < n_lights:
            raise ValueError(f"light index {cfg.light_index} outside 0..{n_lights - 1}")
        return cfg.light_index
    return int(np.random.default_rng([cfg.seed, 0x11647]).integers(n_lights))


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Each epoch draws from its own stream so a resumed run sees the same batches."""
    return np.random.default_rng([seed, epoch])


def _save(out_dir, fields: FieldPair, opt: Adam, epoch: int, light: int) -> None:
    fields.save(os.path.join(out_dir, "checkpoint.bin"))
    write_checkpoint(os.path.join(out_dir, "optimizer.bin"), opt.state(), {"lr": opt.lr})
    with open(os.path.join(out_dir, "train_state.json"), "w") as f:
        json.dump({"epoch": epoch, "light_index": light}, f)


def _fmt(x: float) -> str:
    return repr(float(x))


class Trainer:
    def __init__(self, ds, priors, cfg: LossConfig, field_cfg: FieldConfig | None = None, out_dir=None):
        self.ds = ds
        self.cfg = cfg
        self.out_dir = out_dir
        self.radius = float(ds.meta["bounding_radius"])
        self.light = pick_light(cfg, ds.L)
        self.fields = FieldPair(field_cfg or FieldConfig(), seed=cfg.seed)
        self.opt = Adam(self.fields.params(), lr=cfg.lr)
        self.prepared = prepare_views(ds, priors, self.light, self.radius)
        self.epoch = 0
        self.history: list[dict] = []
        self._good = (self.fields.state(), self.opt.state())

    @classmethod
    def resume(cls, ds, priors, cfg: LossConfig, out_dir) -> "Trainer":
        arrays, fcfg, _, _ = read_checkpoint(os.path.join(out_dir, "checkpoint.bin"))
        tr = cls(ds, priors, cfg, FieldConfig(**fcfg), out_dir)
        tr.fields.load_state(arrays)
        opt_state, _, _, _ = read_checkpoint(os.path.join(out_dir, "optimizer.bin"))
        tr.opt.load_state(opt_state)
        with open(os.path.join(out_dir, "train_state.json")) as f:
            tr.epoch = json.load(f)["epoch"]
        tr._good = (tr.fields.state(), tr.opt.state())
        return tr

    def batch(self, epoch: int):
        return make_batch(self.prepared, self.fields, self.cfg, epoch_rng(self.cfg.seed, epoch), self.radius)

    def loss_at(self, epoch: int) -> dict[str, float]:
        """Loss values the next step at ``epoch`` would see (no update)."""
        tape = Tape()
        return total_loss(tape, self.fields, self.batch(epoch), self.cfg).values()

    def step(self) -> dict[str, float]:
        batch = self.batch(self.epoch)
        tape = Tape()
        try:
            res = total_loss(tape, self.fields, batch, self.cfg)
            if not np.isfinite(res.total.value):
                raise NonFiniteError("non-finite total loss")
            tape.backward(res.total, self.fields.params())
        except NonFiniteError as e:
            self._abort(str(e))
        row = res.values()
        if not self.opt.step():
            logger.warning("epoch %d: non-finite gradient, update skipped", self.epoch)
        row.update(epoch=self.epoch, beta=self.fields.sdf.beta, alpha=self.fields.sdf.alpha)
        self.epoch += 1
        return row

    def _abort(self, why: str):
        state, opt_state = self._good
        self.fields.load_state(state)
        self.opt.load_state(opt_state)
        if self.out_dir:
            self.fields.save(os.path.join(self.out_dir, "checkpoint.bin"))
        raise TrainingAborted(f"epoch {self.epoch}: {why}; parameters restored to the last good checkpoint")

    def run(self, epochs: int | None = None, log_every: int = 100) -> list[dict]:
        end = self.cfg.epochs if epochs is None else self.epoch + epochs
        log_file = None
        writer = None
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            path = os.path.join(self.out_dir, "train_log.csv")
            fresh = self.epoch == 0 or not os.path.exists(path)
            log_file = open(path, "w" if fresh else "a", newline="")
            writer = csv.writer(log_file)
            if fresh:
                writer.writerow(LOG_COLUMNS)
        try:
            while self.epoch < end:
                row = self.step()
                self.history.append(row)
                if writer:
                    writer.writerow([row["epoch"]] + [_fmt(row[k]) for k in LOG_COLUMNS[1:]])
                if log_every and row["epoch"] % log_every == 0:
                    logger.info(
                        "epoch %d total %.5f (mvs %.4f ps %.4f render %.4f mask %.4f eik %.4f) beta %.4f",
                        row["epoch"], row["total"], row["mvs"], row["ps"], row["render"], row["mask"], row["eikonal"], row["beta"],
                    )
                if self.cfg.checkpoint_every and self.epoch % self.cfg.checkpoint_every == 0:
                    self._good = (self.fields.state(), self.opt.state())
                    if self.out_dir:
                        _save(self.out_dir, self.fields, self.opt, self.epoch, self.light)
        finally:
            if log_file:
                log_file.close()
        self._good = (self.fields.state(), self.opt.state())
        if self.out_dir:
            _save(self.out_dir, self.fields, self.opt, self.epoch, self.light)
        return self.history


def train(ds, priors, cfg: LossConfig, field_cfg: FieldConfig | None = None, out_dir=None) -> FieldPair:
    tr = Trainer(ds, priors, cfg, field_cfg, out_dir)
    if out_dir:
        with open(os.path.join(out_dir, "loss_config.json"), "w") as f:
            json.dump({"loss": asdict(cfg), "light_index": tr.light}, f, indent=1, sort_keys=True)
    tr.run()
    return tr.fields
