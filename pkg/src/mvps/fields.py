"""Signed-distance and radiance MLPs with Fourier input encoding."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Dual, Param, Tape, Var

CHECKPOINT_MAGIC = b"MVPSFLD1"
CHECKPOINT_VERSION = 1
_SKIP_SCALE = 1.0 / math.sqrt(2.0)


@dataclass
class FieldConfig:
    sdf_layers: int = 8
    sdf_width: int = 256
    skip_layer: int = 4
    feature_dim: int = 256
    radiance_layers: int = 4
    radiance_width: int = 256
    pos_octaves: int = 6
    dir_octaves: int = 4
    softplus_beta: float = 100.0
    init_radius: float = 0.5
    beta_init: float = 0.1
    sdf_activation: str = "softplus"
    radiance_activation: str = "relu"


# ---------------------------------------------------------------------------
# Fourier features
# ---------------------------------------------------------------------------


def encoded_dim(octaves: int, d: int = 3) -> int:
    return d * (2 * octaves + 1)


def encode(x: np.ndarray, octaves: int) -> np.ndarray:
    """``[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(k-1) pi x), cos(2^(k-1) pi x)]``."""
    if octaves < 0:
        raise ValueError("octaves must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    parts = [x]
    for k in range(octaves):
        w = (2.0**k) * math.pi
        parts += [np.sin(w * x), np.cos(w * x)]
    return np.concatenate(parts, axis=-1)


def encode_tangent(x: np.ndarray, octaves: int) -> np.ndarray:
    """d encode(x) / d x_d for each input coordinate, shape (3, N, D)."""
    n = len(x)
    D = encoded_dim(octaves, x.shape[1])
    out = np.zeros((3, n, D))
    for d in range(3):
        out[d, :, d] = 1.0
        for k in range(octaves):
            w = (2.0**k) * math.pi
            base = 3 + 6 * k
            out[d, :, base + d] = w * np.cos(w * x[:, d])
            out[d, :, base + 3 + d] = -w * np.sin(w * x[:, d])
    return out


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


class SDFNet:
    """MLP x -> (signed distance, feature z) with trainable density scales.

    ``alpha`` and ``beta`` are stored as logarithms so they stay positive.
    """

    def __init__(self, cfg: FieldConfig, rng: np.random.Generator):
        if not 0 < cfg.skip_layer < cfg.sdf_layers:
            raise ValueError(f"skip layer {cfg.skip_layer} outside 1..{cfg.sdf_layers - 1}")
        self.cfg = cfg
        d_in = encoded_dim(cfg.pos_octaves)
        self.layers: list[tuple[Param, Param]] = []
        w = cfg.sdf_width
        for i in range(cfg.sdf_layers):
            fan_in = d_in if i == 0 else w + (d_in if i == cfg.skip_layer else 0)
            fan_out = 1 + cfg.feature_dim if i == cfg.sdf_layers - 1 else w
            if i == cfg.sdf_layers - 1:
                W = np.empty((fan_in, fan_out))
                W[:, 0] = rng.normal(math.sqrt(math.pi) / math.sqrt(fan_in), 1e-4, size=fan_in)
                W[:, 1:] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out - 1))
                b = np.zeros(fan_out)
                b[0] = -cfg.init_radius
            else:
                W = rng.normal(0.0, math.sqrt(2.0) / math.sqrt(fan_out), size=(fan_in, fan_out))
                b = np.zeros(fan_out)
                if i == 0:
                    W[3:] = 0.0
                if i == cfg.skip_layer:
                    W[w + 3 :] = 0.0
            self.layers.append((Param(f"sdf.W{i}", W), Param(f"sdf.b{i}", b)))
        self.log_alpha = Param("sdf.log_alpha", np.array([math.log(1.0 / cfg.beta_init)]))
        self.log_beta = Param("sdf.log_beta", np.array([math.log(cfg.beta_init)]))
        self._calibrate()

    def _calibrate(self, n: int = 512) -> None:
        """Rescale the distance output so that, averaged over directions, it
        vanishes on the init sphere and grows with unit slope.

        A finite-width network only reaches ``|x| - r0`` in expectation; the
        overall gain of one draw can be off by tens of percent, which moves
        the whole zero level set.  The direction set is fixed, so this step
        consumes no randomness.
        """
        r0 = self.cfg.init_radius
        k = np.arange(n) + 0.5
        z = 1.0 - 2.0 * k / n
        phi = math.pi * (1.0 + math.sqrt(5.0)) * k
        u = np.stack([np.sqrt(1.0 - z * z) * np.cos(phi), np.sqrt(1.0 - z * z) * np.sin(phi), z], axis=1)
        a = self.sdf(r0 * u).mean()
        gain = (self.sdf(2.0 * r0 * u).mean() - a) / r0
        if not gain > 0:
            return
        W, b = self.layers[-1]
        W.value[:, 0] /= gain
        b.value[0] = (b.value[0] - a) / gain

    def params(self) -> list[Param]:
        out = [p for layer in self.layers for p in layer]
        return out + [self.log_alpha, self.log_beta]

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.value[0]))

    @property
    def beta(self) -> float:
        return float(np.exp(self.log_beta.value[0]))

    def density_scales(self, tape: Tape) -> tuple[Var, Var]:
        return ad.exp(tape.param(self.log_alpha)), ad.exp(tape.param(self.log_beta))

    def _act(self, h):
        beta = self.cfg.softplus_beta
        if isinstance(h, Dual):
            return ad.dual_softplus(h, beta) if self.cfg.sdf_activation == "softplus" else ad.dual_relu(h)
        return ad.softplus(h, beta) if self.cfg.sdf_activation == "softplus" else ad.relu(h)

    def forward(self, tape: Tape, x: np.ndarray, with_gradient: bool = True, capture: dict | None = None):
        """Evaluate at points ``x`` (N, 3).

        Returns ``(sdf (N, 1), gradient (N, 3) or None, feature (N, F))``.
        ``capture`` (optional dict) receives the skip-layer input for
        structural inspection.
        """
        x = np.asarray(x, dtype=np.float64)
        enc_v = tape.const(encode(x, self.cfg.pos_octaves))
        if with_gradient:
            enc = Dual(enc_v, tape.const(encode_tangent(x, self.cfg.pos_octaves)))
        else:
            enc = enc_v
        h = enc
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            if i == self.cfg.skip_layer:
                # 1/sqrt(2) keeps the activation scale that geometric init relies on
                h = ad.dual_concat([h, enc]) if with_gradient else ad.concat([h, enc], axis=-1)
                h = h * _SKIP_SCALE
                if capture is not None:
                    capture["skip_input"] = h.value if with_gradient else h
            h = h @ tape.param(W) + tape.param(b)
            if i < last:
                h = self._act(h)
        if with_gradient:
            s = ad.getitem(h.value, (slice(None), slice(0, 1)))
            z = ad.getitem(h.value, (slice(None), slice(1, None)))
            g = ad.tangent_to_gradient(ad.getitem(h.tangent, (Ellipsis, slice(0, 1))))
            return s, g, z
        return ad.getitem(h, (slice(None), slice(0, 1))), None, ad.getitem(h, (slice(None), slice(1, None)))

    def sdf(self, x: np.ndarray, chunk: int = 65536) -> np.ndarray:
        """Signed distance only, without recording gradients."""
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(len(x))
        for i in range(0, len(x), chunk):
            tape = Tape(grad_enabled=False, check_finite=False)
            s, _, _ = self.forward(tape, x[i : i + chunk], with_gradient=False)
            out[i : i + chunk] = s.value[:, 0]
        return out

    def sdf_and_gradient(self, x: np.ndarray, chunk: int = 16384) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        s_out = np.empty(len(x))
        g_out = np.empty((len(x), 3))
        for i in range(0, len(x), chunk):
            tape = Tape(grad_enabled=False, check_finite=False)
            s, g, _ = self.forward(tape, x[i : i + chunk], with_gradient=True)
            s_out[i : i + chunk] = s.value[:, 0]
            g_out[i : i + chunk] = g.value
        return s_out, g_out


class RadianceNet:
    """MLP (x, n, v, z) -> RGB in [0, 1]."""

    def __init__(self, cfg: FieldConfig, rng: np.random.Generator):
        self.cfg = cfg
        d_in = 3 + 3 + encoded_dim(cfg.dir_octaves) + cfg.feature_dim
        self.layers: list[tuple[Param, Param]] = []
        w = cfg.radiance_width
        for i in range(cfg.radiance_layers):
            fan_in = d_in if i == 0 else w
            fan_out = 3 if i == cfg.radiance_layers - 1 else w
            W = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            self.layers.append((Param(f"rad.W{i}", W), Param(f"rad.b{i}", np.zeros(fan_out))))

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer]

    def forward(self, tape: Tape, x: np.ndarray, n: Var, v: np.ndarray, z: Var) -> Var:
        h = ad.concat([tape.const(x), n, tape.const(encode(v, self.cfg.dir_octaves)), z], axis=-1)
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            h = h @ tape.param(W) + tape.param(b)
            if i < last:
                h = ad.relu(h) if self.cfg.radiance_activation == "relu" else ad.softplus(h, self.cfg.softplus_beta)
        return ad.sigmoid(h)


class FieldPair:
    """The SDF network (with alpha, beta) and the radiance network."""

    def __init__(self, cfg: FieldConfig | None = None, seed: int = 0):
        self.cfg = cfg or FieldConfig()
        rng = np.random.default_rng(seed)
        self.sdf = SDFNet(self.cfg, rng)
        self.radiance = RadianceNet(self.cfg, rng)

    def params(self) -> list[Param]:
        return self.sdf.params() + self.radiance.params()

    def sdf_eval(self, tape: Tape, x, with_gradient: bool = True):
        s, g, z = self.sdf.forward(tape, x, with_gradient)
        return s, z

    def radiance_eval(self, tape: Tape, x, n, v, z) -> Var:
        n = n if isinstance(n, Var) else tape.const(n)
        z = z if isinstance(z, Var) else tape.const(z)
        return self.radiance.forward(tape, x, n, v, z)

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.params():
            if p.name not in state:
                raise KeyError(f"checkpoint lacks parameter {p.name}")
            if state[p.name].shape != p.value.shape:
                raise ValueError(f"shape mismatch for {p.name}: {state[p.name].shape} vs {p.value.shape}")
            p.value = np.array(state[p.name], dtype=np.float64)

    def save(self, path) -> None:
        write_checkpoint(path, self.state(), asdict(self.cfg), self.sdf.alpha, self.sdf.beta)

    @classmethod
    def load(cls, path) -> "FieldPair":
        arrays, cfg, _, _ = read_checkpoint(path)
        fp = cls(FieldConfig(**cfg))
        fp.load_state(arrays)
        return fp


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------
#
#   magic    8 bytes  b"MVPSFLD1"
#   version  u32
#   alpha    f64
#   beta     f64
#   cfg_len  u32, followed by cfg_len bytes of UTF-8 JSON (FieldConfig)
#   count    u32
#   count x { name_len u16, name bytes, ndim u8, ndim x u32 dims,
#             prod(dims) x f64 row-major }
#
# All integers and floats little-endian.


def write_checkpoint(path, arrays: dict[str, np.ndarray], config: dict, alpha: float = 0.0, beta: float = 0.0) -> None:
    cfg = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Idd", CHECKPOINT_VERSION, alpha, beta))
        f.write(struct.pack("<I", len(cfg)))
        f.write(cfg)
        f.write(struct.pack("<I", len(arrays)))
        for name, a in arrays.items():
            a = np.ascontiguousarray(a, dtype="<f8")
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


class CheckpointError(ValueError):
    pass


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, float, float]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:8]!r}")
    try:
        off = 8
        version, alpha, beta = struct.unpack_from("<Idd", buf, off)
        off += struct.calcsize("<Idd")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (clen,) = struct.unpack_from("<I", buf, off)
        off += 4
        cfg = json.loads(buf[off : off + clen].decode())
        off += clen
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if off + 8 * size > len(buf):
                raise CheckpointError(f"{path}: truncated data for {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
    except struct.error as e:
        raise CheckpointError(f"{path}: truncated checkpoint ({e})") from None
    return arrays, cfg, alpha, beta
