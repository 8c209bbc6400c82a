"""Two-headed DANNTe network: LSTM feature extractor, regressor head,
domain-classifier head behind a gradient-reversal layer, and the losses.

Parameters live in plain NumPy arrays. A forward pass binds them either to
a :class:`~dannte.tensor.Tape` (training) or to constant tensors
(inference) through :func:`bind`.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tape, Tensor

PROB_CLAMP = 1e-7
GATES = ("i", "f", "g", "o")
ACTIVATIONS = ("tanh", "identity", "sigmoid")


@dataclass
class LstmParams:
    """Single-layer LSTM, gates stacked in (i, f, g, o) order.

    ``w`` is (4H, F), ``u`` is (4H, H) and ``b`` is (4H,); the per-gate
    matrices are exposed as views (``W_i``, ``U_f``, ``b_o``, ...).
    """

    w: np.ndarray
    u: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        G, F = self.w.shape
        if G % 4 or self.u.shape != (G, G // 4) or self.b.shape != (G,):
            raise ShapeError(
                f"inconsistent LSTM shapes w={self.w.shape} u={self.u.shape} b={self.b.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.w.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.w.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        H = self.hidden_size
        k = GATES.index(name)
        sl = slice(k * H, (k + 1) * H)
        return self.w[sl], self.u[sl], self.b[sl]

    def __getattr__(self, attr):
        # W_i, U_f, b_o, ... as views into the stacked arrays
        if len(attr) == 3 and attr[1] == "_" and attr[2] in GATES and attr[0] in "WUb":
            return self.gate(attr[2])["WUb".index(attr[0])]
        raise AttributeError(attr)

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
             forget_bias: float = 1.0) -> "LstmParams":
        H, F = hidden_size, input_size
        bound = 1.0 / math.sqrt(H)
        w = rng.uniform(-bound, bound, size=(4 * H, F))
        u = rng.uniform(-bound, bound, size=(4 * H, H))
        b = rng.uniform(-bound, bound, size=4 * H)
        b[H:2 * H] = forget_bias
        return cls(w, u, b)

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmParams":
        H = hidden_size
        return cls(np.zeros((4 * H, input_size)), np.zeros((4 * H, H)), np.zeros(4 * H))

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "u": self.u, "b": self.b}


@dataclass
class FeedforwardParams:
    """Dense tanh extractor over a flattened window (order-blind DANN variant)."""

    weight: np.ndarray  # (W*F, H)
    bias: np.ndarray
    window: int

    @property
    def hidden_size(self) -> int:
        return self.weight.shape[1]

    @property
    def input_size(self) -> int:
        return self.weight.shape[0] // self.window

    @classmethod
    def init(cls, input_size: int, hidden_size: int, window: int,
             rng: np.random.Generator) -> "FeedforwardParams":
        fan_in = input_size * window
        bound = 1.0 / math.sqrt(fan_in)
        return cls(rng.uniform(-bound, bound, size=(fan_in, hidden_size)),
                   rng.uniform(-bound, bound, size=hidden_size), window)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class DenseLayer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"dense weight {self.weight.shape} vs bias {self.bias.shape}")


@dataclass
class HeadParams:
    layers: list[DenseLayer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ShapeError(
                    f"head layers do not chain: {prev.weight.shape} -> {nxt.weight.shape}"
                )

    @property
    def input_size(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_size(self) -> int:
        return self.layers[-1].weight.shape[1]

    @classmethod
    def init(cls, sizes: list[int], activations: list[str],
             rng: np.random.Generator) -> "HeadParams":
        layers = []
        for n_in, n_out, act in zip(sizes, sizes[1:], activations):
            bound = 1.0 / math.sqrt(n_in)
            layers.append(DenseLayer(rng.uniform(-bound, bound, size=(n_in, n_out)),
                                     rng.uniform(-bound, bound, size=n_out), act))
        return cls(layers)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"{k}.weight"] = layer.weight
            out[f"{k}.bias"] = layer.bias
        return out


@dataclass
class DannteModel:
    extractor: LstmParams | FeedforwardParams
    regressor: HeadParams
    domain_head: HeadParams
    lam: float = 1.5

    def __post_init__(self):
        H = self.extractor.hidden_size
        if self.regressor.input_size != H or self.domain_head.input_size != H:
            raise ShapeError("both heads must consume the extractor's hidden size")
        if self.regressor.output_size != 1 or self.regressor.layers[-1].activation != "identity":
            raise ShapeError("regressor must end in a 1-unit identity layer")
        if self.domain_head.output_size != 1 or self.domain_head.layers[-1].activation != "sigmoid":
            raise ShapeError("domain head must end in a 1-unit sigmoid layer")
        if self.lam < 0:
            raise ContractError(f"lambda must be >= 0, got {self.lam}")

    @property
    def hidden_size(self) -> int:
        return self.extractor.hidden_size

    @property
    def input_size(self) -> int:
        return self.extractor.input_size

    def parameters(self) -> dict[str, np.ndarray]:
        """All trainable arrays keyed ``<part>.<name>``, in a fixed order."""
        params = {}
        for part in ("extractor", "regressor", "domain_head"):
            for name, arr in getattr(self, part).arrays().items():
                params[f"{part}.{name}"] = arr
        return params

    def copy(self) -> "DannteModel":
        return copy.deepcopy(self)


def init_model(input_size: int, *, hidden_size: int = 32, head_hidden: int = 16,
               lam: float = 1.5, seed: int = 0, extractor: str = "lstm",
               window: Optional[int] = None) -> DannteModel:
    """Randomly initialised model.

    Each part draws from its own child stream of ``seed``, so the extractor
    and regressor start identical regardless of how the domain head is used.
    """
    ss_ext, ss_reg, ss_dom = np.random.SeedSequence(seed).spawn(3)
    if extractor == "lstm":
        ext = LstmParams.init(input_size, hidden_size, np.random.default_rng(ss_ext))
    elif extractor == "feedforward":
        if window is None:
            raise ContractError("feedforward extractor needs the window length")
        ext = FeedforwardParams.init(input_size, hidden_size, window, np.random.default_rng(ss_ext))
    else:
        raise ContractError(f"unknown extractor {extractor!r}")
    sizes = [hidden_size, head_hidden, 1]
    reg = HeadParams.init(sizes, ["tanh", "identity"], np.random.default_rng(ss_reg))
    dom = HeadParams.init(sizes, ["tanh", "sigmoid"], np.random.default_rng(ss_dom))
    return DannteModel(ext, reg, dom, lam)


# --------------------------------------------------------------------------
# forward pieces


def bind(model: DannteModel, tape: Optional[Tape] = None) -> dict[str, Tensor]:
    """Tensors for every parameter: tape leaves if ``tape`` is given, else constants."""
    if tape is None:
        return {k: Tensor(v) for k, v in model.parameters().items()}
    return {k: tape.watch(v, name=k) for k, v in model.parameters().items()}


def lstm_sequence(x, w: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """Fused LSTM over (B, W, F) sequences from a zero state; returns (B, H).

    Recorded as one ``lstm`` node whose backward runs the kernel's BPTT.
    """
    xv = x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if xv.ndim != 3 or xv.shape[1] < 1:
        raise ShapeError(f"lstm input must be (B, W, F) with W >= 1, got {xv.shape}")
    if xv.shape[2] != w.shape[1]:
        raise ShapeError(f"lstm input features {xv.shape[2]} != weight columns {w.shape[1]}")
    if T._tape_of(x, w, u, b) is None:
        return Tensor(kernels.lstm_final(xv, w.values, u.values, b.values))
    h_seq, c_seq, gates = kernels.lstm_forward(xv, w.values, u.values, b.values)

    def bw(g):
        dx, dw, du, db = kernels.lstm_backward(xv, w.values, u.values, h_seq, c_seq, gates, g)
        return dx, dw, du, db

    return T._emit("lstm", (x, w, u, b), h_seq[-1], bw)


def lstm_step(w: Tensor, u: Tensor, b: Tensor, state, x_t):
    """One LSTM step built from primitive tape operations.

    ``state`` is ``(h, c)`` of shape (B, H) (or (H,)); ``x_t`` is (B, F) (or (F,)).
    """
    h, c = (T._lift(s) for s in state)
    x_t = T._lift(x_t)
    vector = x_t.ndim == 1
    if vector:
        x_t = T.reshape(x_t, (1, -1))
        h = T.reshape(h, (1, -1))
        c = T.reshape(c, (1, -1))
    H = u.shape[1]
    if x_t.shape[1] != w.shape[1] or h.shape[1] != H:
        raise ShapeError(f"lstm_step: x {x_t.shape}, h {h.shape} vs w {w.shape}, u {u.shape}")
    z = T.add_bias(x_t @ T.transpose(w) + h @ T.transpose(u), b)
    i = T.sigmoid(z[:, 0:H])
    f = T.sigmoid(z[:, H:2 * H])
    g = T.tanh(z[:, 2 * H:3 * H])
    o = T.sigmoid(z[:, 3 * H:4 * H])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    if vector:
        return T.reshape(h_new, (H,)), T.reshape(c_new, (H,))
    return h_new, c_new


def encode_stepwise(w: Tensor, u: Tensor, b: Tensor, seq) -> Tensor:
    """Reference encoder unrolled from :func:`lstm_step`; same contract as the fused op."""
    seq = T._lift(seq)
    B, W, _ = seq.shape
    H = u.shape[1]
    h, c = Tensor(np.zeros((B, H))), Tensor(np.zeros((B, H)))
    for t in range(W):
        h, c = lstm_step(w, u, b, (h, c), seq[:, t, :])
    return h


def encode(p: LstmParams, seq) -> np.ndarray:
    """Final hidden state for one (W, F) sequence or a (B, W, F) batch."""
    xv = np.asarray(seq, dtype=np.float64)
    if xv.ndim == 2:
        if xv.shape[0] < 1:
            raise ContractError("empty sequence")
        return kernels.lstm_final(xv[None], p.w, p.u, p.b)[0]
    return kernels.lstm_final(xv, p.w, p.u, p.b)


def gradient_reversal(x: Tensor, lam: float) -> Tensor:
    """Identity forward; multiplies the upstream gradient by ``-lam``."""
    if lam < 0:
        raise ContractError(f"lambda must be >= 0, got {lam}")
    x = T._lift(x)
    lam = float(lam)
    return T._emit("grl", (x,), x.values, lambda g: (-lam * g,))


def dense(head: HeadParams, params: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    out = x
    for k, layer in enumerate(head.layers):
        out = T.add_bias(out @ params[f"{prefix}.{k}.weight"], params[f"{prefix}.{k}.bias"])
        if layer.activation == "tanh":
            out = T.tanh(out)
        elif layer.activation == "sigmoid":
            out = T.sigmoid(out)
    return out


def extract(model: DannteModel, params: dict[str, Tensor], seqs) -> Tensor:
    """Shared embeddings (B, H) of a batch of (B, W, F) windows."""
    xv = np.asarray(seqs.values if isinstance(seqs, Tensor) else seqs, dtype=np.float64)
    if xv.ndim != 3:
        raise ShapeError(f"expected (B, W, F) windows, got shape {xv.shape}")
    ext = model.extractor
    if isinstance(ext, LstmParams):
        emb = lstm_sequence(xv, params["extractor.w"], params["extractor.u"], params["extractor.b"])
    else:
        if xv.shape[1] != ext.window:
            raise ShapeError(f"feedforward extractor built for W={ext.window}, got W={xv.shape[1]}")
        flat = Tensor(xv.reshape(xv.shape[0], -1))
        emb = T.tanh(T.add_bias(flat @ params["extractor.weight"], params["extractor.bias"]))
    # identity marker: one "extract" node per extractor pass
    return T._emit("extract", (emb,), emb.values, lambda g: (g,))


@dataclass
class ForwardResult:
    y_hat: Tensor
    d_prob: Optional[Tensor]
    embeddings: Tensor
    extras: dict = field(default_factory=dict)


def model_forward(model: DannteModel, seqs, params: Optional[dict] = None, *,
                  lam: Optional[float] = None, with_domain: bool = True) -> ForwardResult:
    """Both heads on one shared extractor pass.

    ``lam`` overrides ``model.lam`` for the reversal (used by schedules).
    """
    if params is None:
        params = bind(model)
    xv = np.asarray(seqs.values if isinstance(seqs, Tensor) else seqs, dtype=np.float64)
    if xv.ndim != 3 or xv.shape[0] < 1:
        raise ShapeError(f"expected (B, W, F) windows with B >= 1, got shape {xv.shape}")
    if xv.shape[2] != model.input_size:
        raise ShapeError(f"windows carry {xv.shape[2]} channels, model expects {model.input_size}")
    B = xv.shape[0]
    emb = extract(model, params, xv)
    y_hat = T.reshape(dense(model.regressor, params, "regressor", emb), (B,))
    d_prob = None
    if with_domain:
        rev = gradient_reversal(emb, model.lam if lam is None else lam)
        raw = T.reshape(dense(model.domain_head, params, "domain_head", rev), (B,))
        d_prob = T.clamp(raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return ForwardResult(y_hat, d_prob, emb)


def predict(model: DannteModel, seqs, chunk: int = 1024) -> np.ndarray:
    """Regressor output only (extractor + task head); domain head unused."""
    xv = np.asarray(seqs, dtype=np.float64)
    params = {k: Tensor(v) for k, v in model.parameters().items() if not k.startswith("domain_head.")}
    out = []
    for start in range(0, xv.shape[0], chunk):
        part = xv[start:start + chunk]
        emb = extract(model, params, part)
        out.append(dense(model.regressor, params, "regressor", emb).values.reshape(-1))
    return np.concatenate(out) if out else np.zeros(0)


def embed(model: DannteModel, seqs, chunk: int = 1024) -> np.ndarray:
    """Embeddings (the layer feeding both heads) for many windows."""
    xv = np.asarray(seqs, dtype=np.float64)
    params = bind(model)
    parts = [extract(model, params, xv[s:s + chunk]).values for s in range(0, xv.shape[0], chunk)]
    return np.concatenate(parts) if parts else np.zeros((0, model.hidden_size))


def encode_params(extractor, seqs) -> np.ndarray:
    """Embeddings from a bare extractor (no model, no tape)."""
    xv = np.asarray(seqs, dtype=np.float64)
    if isinstance(extractor, LstmParams):
        return encode(extractor, xv)
    if xv.shape[1] != extractor.window:
        raise ShapeError(f"feedforward extractor built for W={extractor.window}, got W={xv.shape[1]}")
    return np.tanh(xv.reshape(xv.shape[0], -1) @ extractor.weight + extractor.bias)


def regress_params(head: HeadParams, emb) -> np.ndarray:
    """Regressor head applied to precomputed embeddings."""
    params = {f"h.{k}": Tensor(v) for k, v in head.arrays().items()}
    return dense(head, params, "h", Tensor(np.asarray(emb, dtype=np.float64))).values.reshape(-1)


def domain_probabilities(model: DannteModel, seqs, chunk: int = 1024) -> np.ndarray:
    xv = np.asarray(seqs, dtype=np.float64)
    params = bind(model)
    out = []
    for s in range(0, xv.shape[0], chunk):
        emb = extract(model, params, xv[s:s + chunk])
        p = dense(model.domain_head, params, "domain_head", emb).values.reshape(-1)
        out.append(np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))
    return np.concatenate(out) if out else np.zeros(0)


# --------------------------------------------------------------------------
# losses


def masked_mse(y_hat: Tensor, y, source_mask) -> Tensor:
    """Squared error averaged over rows where the mask is 1."""
    y_hat = T._lift(y_hat)
    y = np.asarray(y.values if isinstance(y, Tensor) else y, dtype=np.float64)
    mask = np.asarray(source_mask.values if isinstance(source_mask, Tensor) else source_mask,
                      dtype=np.float64)
    if y_hat.shape != y.shape or y.shape != mask.shape:
        raise ShapeError(f"masked_mse: shapes {y_hat.shape}, {y.shape}, {mask.shape}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ContractError("source mask must be 0/1")
    n = mask.sum()
    if n == 0:
        raise ContractError("source mask selects no rows")
    # masked rows see y = 0 so unread target labels cannot leak through 0 * NaN
    y_safe = np.where(mask == 1.0, y, 0.0)
    return T.div(T.reduce_sum(T.mul(Tensor(mask), T.square(y_hat - Tensor(y_safe)))), n)


def domain_bce(d_prob: Tensor, d_label) -> Tensor:
    """Mean negative log-likelihood of 0/1 domain labels."""
    d_prob = T._lift(d_prob)
    lab = np.asarray(d_label.values if isinstance(d_label, Tensor) else d_label, dtype=np.float64)
    if lab.shape != d_prob.shape:
        raise ShapeError(f"domain_bce: shapes {d_prob.shape} and {lab.shape}")
    ll = Tensor(lab) * T.log(d_prob) + Tensor(1.0 - lab) * T.log(1.0 - d_prob)
    return T.neg(T.reduce_mean(ll))


def total_loss(l_y, l_d, lam: float) -> float:
    """Reported objective ``L_y - lam * L_d``."""
    l_y = l_y.item() if isinstance(l_y, Tensor) else float(l_y)
    l_d = l_d.item() if isinstance(l_d, Tensor) else float(l_d)
    return l_y - lam * l_d
