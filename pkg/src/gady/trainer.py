"""Alternating adversarial training, evaluation replay and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import numerics as nx
from .adversarial import (LossConfig, contextual_negatives, discriminator_loss, generate,
                          generator_loss, init_generator)
from .discriminator import Discriminator, EncoderConfig, MemoryBank
from .injection import inject_anomalies, spectral_clusters
from .metrics import EvalResult, evaluate_scores
from .numerics import Rng, Tape, Tensor
from .positional import PositionalTable
from .tgraph import EventStore, Label, batches, ingest, split

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    fmt: str = "generic_csv"
    use_edge_weight: bool = False
    mode: str = "gan"
    ratio: float = 0.1
    eval_ratios: list[float] | None = None
    epochs: int = 10
    batch_size: int = 200
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    alpha: float = 0.1
    beta: float = 15.0
    gamma: float = 0.1
    eps: float = 1e-8
    mem_dim: int = 32
    emb_dim: int = 32
    time_dim: int = 16
    pos_dim: int = 8
    decoder_hidden: int = 32
    noise_dim: int = 16
    gen_hidden: int = 64
    neighbors: int = 10
    layers: int = 2
    walk_depth: int = 2
    pos_cap: int = 64
    relative_pos: bool = True
    k_clusters: int = 10
    train_ratio: float = 0.5
    seed: int = 0
    early_stop_tol: float = 1e-5

    def __post_init__(self):
        if self.mode not in ("gan", "nogan"):
            raise ValueError(f"mode must be 'gan' or 'nogan', got {self.mode!r}")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.loss_config()

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.alpha, self.beta, self.gamma, self.eps)

    def encoder_config(self, feat_dim: int = 0) -> EncoderConfig:
        return EncoderConfig(self.mem_dim, self.emb_dim, self.time_dim, self.pos_dim, feat_dim,
                             self.layers, self.neighbors, self.walk_depth, self.decoder_hidden,
                             self.relative_pos)


@dataclass
class RunReport:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    results: dict[str, dict] = field(default_factory=dict)
    wall_clock: float = 0.0
    build: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def metrics_json(self) -> str:
        """Everything except timing, for byte-level reproducibility checks."""
        d = {"config": self.config, "epochs": self.epochs, "results": self.results}
        return json.dumps(d, indent=2, sort_keys=True)


def build_id() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class GadyModel:
    """Discriminator + generator parameters together with the stream state
    (memory bank, positional table) reached at the end of the training stream."""

    def __init__(self, cfg: RunConfig, train: EventStore, rng: Rng | None = None):
        self.cfg = cfg
        self.train_store = train
        rng = rng or Rng(cfg.seed)
        self.disc = Discriminator(cfg.encoder_config(train.feat_dim), rng.spawn(1))
        self.gen = init_generator(rng.spawn(2), cfg.noise_dim, cfg.gen_hidden)
        self.bank = MemoryBank(train.num_nodes, cfg.mem_dim)
        self.table = self.new_table()
        self.rng = rng

    @property
    def num_nodes(self) -> int:
        return self.train_store.num_nodes

    def new_table(self) -> PositionalTable:
        return PositionalTable(self.cfg.walk_depth, self.cfg.pos_cap)

    def reset_state(self) -> None:
        self.bank.reset()
        self.table = self.new_table()

    def generator_hash(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.gen):
            h.update(k.encode())
            h.update(self.gen[k].data.tobytes())
        return h.hexdigest()

    # -- checkpoint -----------------------------------------------------------------

    def save(self, path) -> None:
        def pack(params):
            return {k: {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
                    for k, p in sorted(params.items())}

        last = [None if not np.isfinite(x) else float(x) for x in self.bank.last_update]
        s = self.train_store
        doc = {
            "version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "discriminator": pack(self.disc.params),
            "generator": pack(self.gen),
            "memory": {"shape": list(self.bank.state.shape),
                       "values": self.bank.state.reshape(-1).tolist(), "last_update": last},
            "positional": self.table.to_state(),
            "rng": self.rng.get_state(),
            "train_stream": {"num_nodes": s.num_nodes, "src": s.src.tolist(), "dst": s.dst.tolist(),
                             "time": s.time.tolist(), "feat_shape": list(s.feat.shape),
                             "feat": s.feat.reshape(-1).tolist()},
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> GadyModel:
        doc = json.loads(Path(path).read_text())
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        cfg = RunConfig.from_dict(doc["config"])
        ts = doc["train_stream"]
        train = EventStore(ts["src"], ts["dst"], ts["time"], ts["num_nodes"],
                           np.array(ts["feat"]).reshape(ts["feat_shape"]), presorted=True)
        model = cls(cfg, train)

        def unpack(blob, into):
            for k, entry in blob.items():
                into[k].data = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])

        unpack(doc["discriminator"], model.disc.params)
        unpack(doc["generator"], model.gen)
        mem = doc["memory"]
        model.bank.state = np.array(mem["values"], dtype=np.float64).reshape(mem["shape"])
        model.bank.last_update = np.array([-np.inf if x is None else x for x in mem["last_update"]])
        model.table = PositionalTable.from_state(doc["positional"])
        model.rng.set_state(doc["rng"])
        return model


def _finite_or_raise(value: float, what: str, epoch: int, batch_no: int, arrays: dict,
                     dump_dir: Path | None) -> None:
    if math.isfinite(value):
        return
    where = ""
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
        target = dump_dir / f"divergence_e{epoch}_b{batch_no}.json"
        target.write_text(json.dumps({k: np.asarray(v).tolist() for k, v in arrays.items()}))
        where = f"; batch dumped to {target}"
    raise TrainingDivergence(f"{what} became {value} at epoch {epoch}, batch {batch_no}{where}")


def train(cfg: RunConfig, store: EventStore | None = None, *, evaluate_after: bool = True,
          dump_dir=None, generated_sink: list | None = None,
          progress: bool = False) -> tuple[RunReport, GadyModel]:
    """Train on the chronological prefix of ``store`` and optionally evaluate.

    Per batch: draw negatives (generator or contextual corruption), take one
    discriminator step, then (gan mode) one generator step, then fold the
    batch's real events into memory and positional state.  Memory updates for
    a batch are replayed on the next batch's tape so the recurrent cell
    receives gradients.  With ``evaluate_after`` the labeled test streams for
    every ratio in ``cfg.eval_ratios`` are injected and scored.
    """
    t0 = time.perf_counter()
    if store is None:
        if cfg.data is None:
            raise ValueError("no dataset given")
        store = ingest(cfg.data, cfg.fmt, cfg.use_edge_weight)
    train_s, test_s = split(store, cfg.train_ratio)
    rng = Rng(cfg.seed)
    model = GadyModel(cfg, train_s, rng)
    disc, gen = model.disc, model.gen
    lcfg = cfg.loss_config()
    noise_rng, neg_rng = rng.spawn(3), rng.spawn(4)
    opt_d = nx.Adam(disc.params, cfg.lr_d)
    opt_g = nx.Adam(gen, cfg.lr_g) if cfg.mode == "gan" else None
    dump_dir = Path(dump_dir) if dump_dir is not None else None
    N = train_s.num_nodes
    report = RunReport(config=cfg.to_dict(), build=build_id())
    prev_ld = None

    for epoch in range(1, cfg.epochs + 1):
        model.reset_state()
        bank, table = model.bank, model.table
        pending = None
        ld_sum = lg_sum = 0.0
        nb = 0
        for bno, b in enumerate(batches(train_s, cfg.batch_size)):
            sl = slice(b.start, b.stop)
            rs, rd, rt, rf = train_s.src[sl], train_s.dst[sl], train_s.time[sl], train_s.feat[sl]
            n = len(rs)
            if cfg.mode == "gan":
                z = nx.squashed_noise(noise_rng, (max(n, 2), cfg.noise_dim))
                fake = generate(gen, z, (b.t_min, b.t_max), N)
                fs, fd, ft = fake.src, fake.dst, fake.t
            else:
                fs, fd, ft = contextual_negatives(rs, rd, rt, neg_rng, N)

            with Tape() as tape:
                if pending is not None:
                    mem, last = bank.advance(disc.params, *pending)
                else:
                    mem, last = Tensor(bank.state), bank.last_update.copy()
                real_sc = disc.score(mem, train_s, table, rs, rd, rt)
                fake_sc = disc.score(mem, train_s, table, fs, fd, ft)
                ld = discriminator_loss(fake_sc, real_sc, lcfg)
            _finite_or_raise(ld.item(), "discriminator loss", epoch, bno,
                             {"src": rs, "dst": rd, "time": rt, "fake_src": fs, "fake_dst": fd,
                              "fake_time": ft}, dump_dir)
            opt_d.step(tape.backward(ld, disc.params))
            bank.commit(mem, last)
            ld_sum += ld.item()

            if cfg.mode == "gan":
                frozen = Tensor(bank.state)
                with Tape() as tape:
                    fake = generate(gen, z, (b.t_min, b.t_max), N)
                    sc = disc.score(frozen, train_s, table, fake.src, fake.dst, fake.t, fake.time)
                    lg = generator_loss(sc, fake.unit, lcfg)
                _finite_or_raise(lg.item(), "generator loss", epoch, bno,
                                 {"src": rs, "dst": rd, "time": rt, "fake_src": fake.src,
                                  "fake_dst": fake.dst, "fake_time": fake.t}, dump_dir)
                opt_g.step(tape.backward(lg, gen))
                lg_sum += lg.item()
                if generated_sink is not None:
                    for u, v, t, s in zip(fake.src, fake.dst, fake.t, sc.data):
                        generated_sink.append((epoch, bno, int(u), int(v), float(t), float(s)))

            for u, v, t in zip(rs.tolist(), rd.tolist(), rt.tolist()):
                table.update_on_event(u, v, t)
            pending = (rs, rd, rt, rf)
            nb += 1

        if pending is not None:
            bank.update(disc.params, *pending)
        entry = {"epoch": epoch, "loss_d": ld_sum / nb}
        if cfg.mode == "gan":
            entry["loss_g"] = lg_sum / nb
        report.epochs.append(entry)
        if progress:
            log.info("epoch %d %s", epoch, entry)
        if prev_ld is not None and abs(entry["loss_d"] - prev_ld) < cfg.early_stop_tol:
            break
        prev_ld = entry["loss_d"]

    if evaluate_after:
        for ratio in cfg.eval_ratios or [cfg.ratio]:
            labeled = build_test_stream(store, cfg, ratio)
            report.results[f"{ratio:g}"] = evaluate(model, labeled).to_dict()
    report.wall_clock = time.perf_counter() - t0
    return report, model


def build_test_stream(store: EventStore, cfg: RunConfig, ratio: float, seed: int | None = None,
                      solver: str = "power") -> EventStore:
    """Spectral-cluster the whole graph and inject ``ratio`` anomalies into the test split."""
    seed = cfg.seed if seed is None else seed
    _, test_s = split(store, cfg.train_ratio)
    rng = Rng(seed).spawn(7)
    clusters = spectral_clusters(store, cfg.k_clusters, rng, solver=solver)
    return inject_anomalies(test_s, clusters, ratio, store.pairs(), rng)


def evaluate(model: GadyModel, labeled: EventStore, batch_size: int | None = None,
             return_scores: bool = False):
    """Replay ``labeled`` after the training stream, scoring each batch before
    folding all of its events (whatever their label) into the state."""
    if labeled.label is None or len(labeled) == 0:
        raise ValueError("labeled test stream is empty or has no label column")
    train = model.train_store
    if len(train) and len(labeled) and labeled.time[0] < train.time[-1]:
        raise ValueError("test stream starts before the end of the training stream")
    bs = batch_size or model.cfg.batch_size
    bank = model.bank.copy()
    table = model.table.copy()
    disc = model.disc
    full = EventStore(np.concatenate([train.src, labeled.src]), np.concatenate([train.dst, labeled.dst]),
                      np.concatenate([train.time, labeled.time]),
                      max(train.num_nodes, labeled.num_nodes),
                      np.concatenate([train.feat, labeled.feat.reshape(len(labeled), -1)]),
                      presorted=True)
    if full.num_nodes > bank.num_nodes:
        raise ValueError("test stream references nodes unknown to the model")
    scores = np.empty(len(labeled))
    for b in batches(labeled, bs):
        sl = slice(b.start, b.stop)
        s, d, t, f = labeled.src[sl], labeled.dst[sl], labeled.time[sl], labeled.feat[sl]
        scores[sl] = disc.score(Tensor(bank.state), full, table, s, d, t).data
        bank.update(disc.params, s, d, t, f)
        for u, v, tt in zip(s.tolist(), d.tolist(), t.tolist()):
            table.update_on_event(u, v, tt)
    y = (labeled.label == int(Label.INJECTED)).astype(np.int64)
    result = evaluate_scores(scores, y)
    return (result, scores) if return_scores else result


def read_labeled(path, num_nodes: int) -> EventStore:
    store = ingest(path, "generic_csv", remap=False, num_nodes=num_nodes)
    header = Path(path).read_text().splitlines()[0]
    if not header.strip().endswith("label"):
        raise ValueError(f"{path}: no label column")
    return store
