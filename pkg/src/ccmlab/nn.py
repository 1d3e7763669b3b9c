"""From-scratch feedforward networks with fusion branches and an attention gate.

Two architectures are built here. The location-to-covariance network
(lcnet) splits its input into a location branch and a speed branch, each a
small stack of fully connected ReLU layers, concatenates the branch
features, derives sigmoid attention weights from the concatenation through
a gate stack, multiplies features and weights elementwise, and finishes
with a ReLU trunk ending in a linear layer of width n^2 (a packed
covariance). The channel-to-location network (lenet) is a plain MLP from
the normalized real/imaginary channel parts to plane coordinates.

Training is mini-batch Adam on mean squared error. Everything is numpy
float64 and deterministic given a seed: batch order is a pure function of
(seed, epoch), so a run can be stopped and resumed bit-for-bit through the
checkpoint plus trainer-state files.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .covariance import psd_repair, unpack_cov

_ACTS = ("relu", "sigmoid", "linear")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _act_grad(name, z, h):
    # derivative wrt z, expressed via z and the cached output h
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "sigmoid":
        return h * (1.0 - h)
    return np.ones_like(z)


class Layer:
    """One fully connected layer: h = act(w @ x + b)."""

    __slots__ = ("w", "b", "act")

    def __init__(self, n_in, n_out, act):
        if act not in _ACTS:
            raise ValueError("unknown activation %r" % act)
        self.w = np.zeros((n_out, n_in))
        self.b = np.zeros(n_out)
        self.act = act

    @property
    def n_in(self):
        return self.w.shape[1]

    @property
    def n_out(self):
        return self.w.shape[0]


def _chain(layers, what):
    for prev, nxt in zip(layers, layers[1:]):
        if prev.n_out != nxt.n_in:
            raise ValueError("%s widths do not chain: %d -> %d" % (what, prev.n_out, nxt.n_in))


class MlpModel:
    """Feedforward net: optional input branches, optional attention gate, trunk.

    branches: list of layer stacks applied to consecutive input slices;
    empty means the raw input feeds the trunk (and gate) directly.
    gate: layer stack from the concatenated features to attention weights
    (same width), multiplied elementwise into the features; empty disables
    gating. trunk: final stack; its last layer is the model output.
    """

    def __init__(self, branches, gate, trunk):
        self.branches = [list(b) for b in branches]
        self.gate = list(gate)
        self.trunk = list(trunk)
        for i, b in enumerate(self.branches):
            _chain(b, "branch %d" % i)
        _chain(self.gate, "gate")
        _chain(self.trunk, "trunk")
        width = sum(b[-1].n_out for b in self.branches) if self.branches else None
        if width is None:
            width = self.gate[0].n_in if self.gate else self.trunk[0].n_in
        if self.gate:
            if self.gate[0].n_in != width or self.gate[-1].n_out != width:
                raise ValueError("gate must map feature width %d to itself" % width)
        if self.trunk[0].n_in != width:
            raise ValueError("trunk input width %d != feature width %d" % (self.trunk[0].n_in, width))
        self.feature_width = width

    @property
    def input_width(self):
        if self.branches:
            return sum(b[0].n_in for b in self.branches)
        return self.trunk[0].n_in if not self.gate else self.gate[0].n_in

    @property
    def output_width(self):
        return self.trunk[-1].n_out

    def layers(self):
        for b in self.branches:
            yield from b
        yield from self.gate
        yield from self.trunk

    def parameters(self):
        """Parameter arrays in canonical order (w then b per layer)."""
        out = []
        for layer in self.layers():
            out.append(layer.w)
            out.append(layer.b)
        return out

    def _split(self, x):
        if not self.branches:
            return [x]
        widths = [b[0].n_in for b in self.branches]
        if sum(widths) != x.shape[1]:
            raise ValueError("input width %d != expected %d" % (x.shape[1], sum(widths)))
        edges = np.cumsum(widths)[:-1]
        return np.split(x, edges, axis=1)

    def forward(self, x):
        """Model output for (batch, d) or (d,) input."""
        squeeze = np.ndim(x) == 1
        out = self._forward_cached(np.atleast_2d(np.asarray(x, dtype=float)))[0]
        return out[0] if squeeze else out

    def _forward_cached(self, x):
        if x.shape[1] != self.input_width:
            raise ValueError("input width %d != expected %d" % (x.shape[1], self.input_width))
        cache = {"x": x, "branch": [], "gate": []}
        parts = self._split(x)
        outs = []
        for b, part in zip(self.branches, parts):
            records = []
            h = part
            for layer in b:
                z = h @ layer.w.T + layer.b
                a_in = h
                h = _act(layer.act, z)
                records.append((a_in, z, h))
            cache["branch"].append(records)
            outs.append(h)
        concat = np.concatenate(outs, axis=1) if self.branches else x
        cache["concat"] = concat
        h = concat
        for layer in self.gate:
            z = h @ layer.w.T + layer.b
            a_in = h
            h = _act(layer.act, z)
            cache["gate"].append((a_in, z, h))
        gated = concat * h if self.gate else concat
        cache["gated"] = gated
        cache["trunk"] = []
        h = gated
        for layer in self.trunk:
            z = h @ layer.w.T + layer.b
            a_in = h
            h = _act(layer.act, z)
            cache["trunk"].append((a_in, z, h))
        return h, cache

    def _stack_backward(self, layers, records, d_out):
        grads = []
        d = d_out
        for layer, (a_in, z, h) in zip(reversed(layers), reversed(records)):
            dz = d * _act_grad(layer.act, z, h)
            grads.append(dz.sum(axis=0))  # db
            grads.append(dz.T @ a_in)  # dw
            d = dz @ layer.w
        grads.reverse()
        return grads, d

    def backward(self, cache, d_out):
        """Gradients in canonical parameter order for upstream d_out."""
        trunk_grads, d_gated = self._stack_backward(self.trunk, cache["trunk"], d_out)
        if self.gate:
            g = cache["gate"][-1][2]
            concat = cache["concat"]
            d_concat = d_gated * g
            d_gate_out = d_gated * concat
            gate_grads, d_from_gate = self._stack_backward(self.gate, cache["gate"], d_gate_out)
            d_concat = d_concat + d_from_gate
        else:
            gate_grads = []
            d_concat = d_gated
        branch_grads = []
        if self.branches:
            widths = [b[-1].n_out for b in self.branches]
            edges = np.cumsum(widths)[:-1]
            pieces = np.split(d_concat, edges, axis=1)
            for b, rec, piece in zip(self.branches, cache["branch"], pieces):
                g, _ = self._stack_backward(b, rec, piece)
                branch_grads.extend(g)
        return branch_grads + gate_grads + trunk_grads


def init_params(model, seed, gain=np.sqrt(6.0)):
    """Uniform fan-in initialization: w ~ U(+-gain/sqrt(n_in)), b = 0.

    The default gain sqrt(6) keeps second moments roughly constant through
    ReLU layers (uniform(+-b) carries variance b^2/3 and ReLU halves it),
    so deep stacks neither die nor explode at the start of training.
    """
    rng = np.random.default_rng([int(seed)])
    for layer in model.layers():
        bound = gain / np.sqrt(layer.n_in)
        layer.w[...] = rng.uniform(-bound, bound, size=layer.w.shape)
        layer.b[...] = 0.0
    return model


def build_lcnet(n_b=12, loc_branch=(50, 100), speed_branch=(20, 50),
                gate=(150, 150, 150), trunk=(200, 200, 150, 150)):
    """Fusion-attention net from (x, y, speed) to a packed covariance."""
    def stack(n_in, widths, last_act="relu"):
        layers = []
        for i, w in enumerate(widths):
            act = last_act if i == len(widths) - 1 else "relu"
            layers.append(Layer(n_in, w, act))
            n_in = w
        return layers

    branches = [stack(2, loc_branch), stack(1, speed_branch)]
    feat = loc_branch[-1] + speed_branch[-1]
    gate_layers = stack(feat, tuple(gate[:-1]) + (feat,), last_act="sigmoid")
    trunk_layers = stack(feat, tuple(trunk) + (n_b * n_b,), last_act="linear")
    return MlpModel(branches, gate_layers, trunk_layers)


def build_lenet(n_b=12, hidden=(50, 100, 200, 100, 50)):
    """Plain MLP from normalized channel parts (width 2 n_b) to coordinates."""
    layers = []
    n_in = 2 * n_b
    for w in hidden:
        layers.append(Layer(n_in, w, "relu"))
        n_in = w
    layers.append(Layer(n_in, 2, "linear"))
    return MlpModel([], [], layers)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    plateau_patience: int = 5
    plateau_factor: float = 0.5

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        for beta in (self.beta1, self.beta2):
            if not 0.0 < beta < 1.0:
                raise ValueError("Adam decays must lie in (0, 1)")


@dataclass
class TrainerState:
    """Adam moments and schedule state; lets training resume bit-for-bit."""

    step: int = 0
    epoch: int = 0
    lr: float = None
    best_loss: float = np.inf
    wait: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def _mse(pred, y):
    return float(np.mean((pred - y) ** 2))


def train(model, features, labels, cfg, state=None):
    """Mini-batch Adam on mean squared error.

    Returns (loss_trace, state): one mean epoch loss per epoch (appended to
    any trace implied by a resumed state) and the trainer state to resume
    from. Batch order depends only on (cfg.seed, epoch index), and the
    learning rate halves after `plateau_patience` epochs without a new
    best loss. Raises RuntimeError when the loss turns non-finite.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if len(x) == 0:
        raise ValueError("training set must be non-empty")
    if x.ndim != 2 or y.ndim != 2 or len(x) != len(y):
        raise ValueError("features and labels must be matching 2-D arrays")
    params = model.parameters()
    if state is None:
        state = TrainerState(lr=cfg.learning_rate)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    trace = []
    n = len(x)
    d_out = y.shape[1]
    for _ in range(cfg.epochs):
        order = np.random.default_rng([int(cfg.seed), state.epoch]).permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            pred, cache = model._forward_cached(xb)
            diff = pred - yb
            total += float(np.sum(diff**2)) / d_out
            grads = model.backward(cache, 2.0 * diff / diff.size)
            state.step += 1
            b1c = 1.0 - cfg.beta1**state.step
            b2c = 1.0 - cfg.beta2**state.step
            for p, g, m, v in zip(params, grads, state.m, state.v):
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * g * g
                p -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + cfg.eps)
        loss = total / n
        if not np.isfinite(loss):
            raise RuntimeError(
                "training diverged: non-finite loss at epoch %d (lr=%g)"
                % (state.epoch, state.lr)
            )
        trace.append(loss)
        state.epoch += 1
        if loss < state.best_loss:
            state.best_loss = loss
            state.wait = 0
        else:
            state.wait += 1
            if state.wait >= cfg.plateau_patience:
                state.lr *= cfg.plateau_factor
                state.wait = 0
    return trace, state


# ---------------------------------------------------------------------------
# gradient checking


def _apply_stack(layers, h, start=0):
    for layer in layers[start:]:
        h = _act(layer.act, h @ layer.w.T + layer.b)
    return h


def _loss_rows(out, y):
    return np.mean((out - y) ** 2, axis=1)


class _SuffixEvaluator:
    """Loss of the network continued from an intermediate activation batch.

    Prefix activations are frozen from one cached forward pass, so only
    layers at and after the perturbation point are recomputed.
    """

    def __init__(self, model, cache, y):
        self.model = model
        self.cache = cache
        self.y = np.atleast_2d(y)

    def from_trunk(self, i, h):
        return _loss_rows(_apply_stack(self.model.trunk, h, i), self.y)

    def from_gate(self, i, g):
        g = _apply_stack(self.model.gate, g, i)
        return self.from_trunk(0, self.cache["concat"] * g)

    def from_branch(self, b, i, h):
        m = self.model
        h = _apply_stack(m.branches[b], h, i)
        pieces = []
        for j, rec in enumerate(self.cache["branch"]):
            out = h if j == b else np.broadcast_to(rec[-1][2], (len(h), rec[-1][2].shape[1]))
            pieces.append(out)
        concat = np.concatenate(pieces, axis=1)
        if m.gate:
            g = _apply_stack(m.gate, concat, 0)
            return self.from_trunk(0, concat * g)
        return self.from_trunk(0, concat)


def _fd_layer(layer, a_in, z, continue_fn, epsilon, chunk=4096):
    """Central finite differences for every parameter of one layer.

    The perturbed forward reuses the cached layer input: changing w[i, j]
    by +/-eps moves the pre-activation only in coordinate i, by eps*a[j],
    so a whole batch of single-parameter perturbations shares one suffix
    evaluation.
    """
    a_in = a_in[0]
    z = z[0]
    h0 = _act(layer.act, z)
    n_out, n_in = layer.w.shape

    def fd_block(i_idx, delta):
        rows = len(i_idx)
        out = np.empty(rows)
        for lo in range(0, rows, chunk):
            sl = slice(lo, min(lo + chunk, rows))
            ii = i_idx[sl]
            plus = np.tile(h0, (len(ii), 1))
            plus[np.arange(len(ii)), ii] = _act(layer.act, z[ii] + delta[sl])
            lp = continue_fn(plus)
            minus = np.tile(h0, (len(ii), 1))
            minus[np.arange(len(ii)), ii] = _act(layer.act, z[ii] - delta[sl])
            lm = continue_fn(minus)
            out[sl] = (lp - lm) / (2.0 * epsilon)
        return out

    i_w = np.repeat(np.arange(n_out), n_in)
    j_w = np.tile(np.arange(n_in), n_out)
    fd_w = fd_block(i_w, epsilon * a_in[j_w]).reshape(n_out, n_in)
    fd_b = fd_block(np.arange(n_out), np.full(n_out, epsilon))
    return fd_w, fd_b


def gradient_check(model, features, label, epsilon=1e-5):
    """Max relative gap between backprop and central finite differences.

    Every parameter is checked against (L(th+eps) - L(th-eps)) / (2 eps) on
    the MSE loss at one sample. Relative error divides by
    max(|g|, |g_fd|, 1e-3 * g_max) so parameters whose gradients sit far
    below the gradient scale are measured against that scale instead of
    amplifying finite-difference roundoff. The probe must keep every ReLU
    away from its kink (see `draw_gradient_probe`), or differences straddle
    a slope discontinuity and the comparison is meaningless.
    """
    if not 1e-8 < epsilon < 1e-3:
        raise ValueError("epsilon must lie in (1e-8, 1e-3)")
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.atleast_2d(np.asarray(label, dtype=float))
    pred, cache = model._forward_cached(x)
    analytic = model.backward(cache, 2.0 * (pred - y) / pred.size)
    ev = _SuffixEvaluator(model, cache, y)

    fd = []
    for b, records in enumerate(cache["branch"]):
        for i, (a_in, z, _) in enumerate(records):
            layer = model.branches[b][i]
            w, bias = _fd_layer(layer, a_in, z, lambda h, b=b, i=i: ev.from_branch(b, i + 1, h), epsilon)
            fd.extend([w, bias])
    for i, (a_in, z, _) in enumerate(cache["gate"]):
        layer = model.gate[i]
        w, bias = _fd_layer(layer, a_in, z, lambda h, i=i: ev.from_gate(i + 1, h), epsilon)
        fd.extend([w, bias])
    for i, (a_in, z, _) in enumerate(cache["trunk"]):
        layer = model.trunk[i]
        w, bias = _fd_layer(layer, a_in, z, lambda h, i=i: ev.from_trunk(i + 1, h), epsilon)
        fd.extend([w, bias])

    g_max = max(max(np.abs(g).max() for g in analytic), max(np.abs(g).max() for g in fd))
    if g_max == 0.0:
        return 0.0
    worst = 0.0
    for g, g_fd in zip(analytic, fd):
        den = np.maximum(np.maximum(np.abs(g), np.abs(g_fd)), 1e-3 * g_max)
        worst = max(worst, float(np.max(np.abs(g - g_fd) / den)))
    return worst


def relu_margin(model, features):
    """Smallest |pre-activation| over all ReLU units for one input.

    Finite differencing is only trustworthy when no ReLU sits within the
    perturbation of its kink; callers redraw the probe input when this
    margin is tiny.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    _, cache = model._forward_cached(x)
    margin = np.inf
    groups = list(cache["branch"]) + [cache["gate"], cache["trunk"]]
    stacks = list(model.branches) + [model.gate, model.trunk]
    for layers, records in zip(stacks, groups):
        for layer, (_, z, _) in zip(layers, records):
            if layer.act == "relu":
                margin = min(margin, float(np.min(np.abs(z))))
    return margin


def draw_gradient_probe(model, rng, epsilon=1e-5, safety=30.0, max_tries=200):
    """Draw a standard-normal (input, label) pair safe for finite differences.

    A single-parameter perturbation of size eps moves downstream
    pre-activations by at most about eps times the activation scale, so a
    probe is accepted once every ReLU pre-activation clears
    safety * eps * max|activation|. Raises if no such probe is found,
    which indicates pathological weights rather than bad luck.
    """
    for _ in range(max_tries):
        x = rng.normal(size=model.input_width)
        _, cache = model._forward_cached(np.atleast_2d(x))
        records = [r for recs in cache["branch"] for r in recs]
        records += cache["gate"] + cache["trunk"]
        peak = float(np.max(np.abs(cache["x"])))
        for _, _, h in records:
            peak = max(peak, float(np.max(np.abs(h))))
        if relu_margin(model, x) > safety * epsilon * max(peak, 1.0):
            return x, rng.normal(size=model.output_width)
    raise RuntimeError("no kink-free probe found in %d tries" % max_tries)


# ---------------------------------------------------------------------------
# prediction wrappers


def lcnet_predict(model, coefficient, pos_xy, speed):
    """Covariance prediction: forward, unpack, rescale, PSD repair."""
    pos_xy = np.asarray(pos_xy, dtype=float)
    feat = np.array([pos_xy[0], pos_xy[1], float(speed)])
    packed = model.forward(feat)
    return psd_repair(unpack_cov(packed) * coefficient)


def lenet_features(h, zeta):
    """Normalized channel features [Re(h); Im(h)] / zeta (batched rows)."""
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    return np.concatenate([h.real, h.imag], axis=1) / zeta


def lenet_predict(model, zeta, h):
    """Plane-coordinate estimate from one channel (or a batch of rows)."""
    squeeze = np.ndim(h) == 1
    out = model.forward(lenet_features(h, zeta))
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# checkpoint and trainer-state files


def _arch_doc(model):
    def stack_doc(layers):
        return {
            "widths": [layers[0].n_in] + [l.n_out for l in layers] if layers else [],
            "acts": [l.act for l in layers],
        }

    return {
        "branches": [stack_doc(b) for b in model.branches],
        "gate": stack_doc(model.gate),
        "trunk": stack_doc(model.trunk),
    }


def _model_from_arch(doc):
    def stack(d):
        widths, acts = d["widths"], d["acts"]
        return [Layer(widths[i], widths[i + 1], acts[i]) for i in range(len(acts))]

    return MlpModel([stack(b) for b in doc["branches"]], stack(doc["gate"]), stack(doc["trunk"]))


def _write_tensor_line(fh, arr):
    fh.write(" ".join(repr(float(v)) for v in np.asarray(arr).ravel()))
    fh.write("\n")


def save_checkpoint(model, path):
    """Text checkpoint: header, architecture line, one line per tensor.

    Floats are written with shortest round-trip repr, so reloading
    reproduces the weights bit for bit on any platform.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mlpckpt 1\n")
        fh.write(json.dumps(_arch_doc(model), separators=(",", ":")))
        fh.write("\n")
        for layer in model.layers():
            _write_tensor_line(fh, layer.w)
            _write_tensor_line(fh, layer.b)


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "mlpckpt 1":
            raise ValueError("not a checkpoint file: header %r" % header)
        model = _model_from_arch(json.loads(fh.readline()))
        for layer in model.layers():
            layer.w[...] = np.array(fh.readline().split(), dtype=float).reshape(layer.w.shape)
            layer.b[...] = np.array(fh.readline().split(), dtype=float)
    return model


def save_trainer_state(state, path):
    """Sidecar for exact training resume: schedule scalars plus Adam moments."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mlptrain 1\n")
        fh.write(
            json.dumps(
                {
                    "step": state.step,
                    "epoch": state.epoch,
                    "lr": state.lr,
                    "best_loss": state.best_loss if np.isfinite(state.best_loss) else None,
                    "wait": state.wait,
                },
                separators=(",", ":"),
            )
        )
        fh.write("\n")
        for m in state.m:
            _write_tensor_line(fh, m)
        for v in state.v:
            _write_tensor_line(fh, v)


def load_trainer_state(model, path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "mlptrain 1":
            raise ValueError("not a trainer-state file: header %r" % header)
        doc = json.loads(fh.readline())
        state = TrainerState(
            step=doc["step"],
            epoch=doc["epoch"],
            lr=doc["lr"],
            best_loss=np.inf if doc["best_loss"] is None else doc["best_loss"],
            wait=doc["wait"],
        )
        for p in model.parameters():
            state.m.append(np.array(fh.readline().split(), dtype=float).reshape(p.shape))
        for p in model.parameters():
            state.v.append(np.array(fh.readline().split(), dtype=float).reshape(p.shape))
    return state
