"""Two-layer gated recurrent blocks with a skip-connected output layer.

Per layer, with gates stacked in the order [r, z, n]:

    r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * h + z * n

so an update gate near 1 makes the state follow the candidate.  The block
output is ``W_out [x, h2] + b_out`` where ``x`` is the block input and ``h2``
the top hidden state.

Everything is float64 torch; autograd supplies the reverse pass.
"""
import math
from dataclasses import dataclass, field

import torch

from ..errors import DimensionMismatch, NumericalOverflow

DTYPE = torch.float64
N_LAYERS = 2


@dataclass(eq=False)
class GruBlock:
    input_size: int
    hidden_size: int
    output_size: int
    dropout: float = 0.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.params:
            self.params = _zero_params(self.input_size, self.hidden_size, self.output_size)
        for name, shape in param_shapes(self.input_size, self.hidden_size, self.output_size).items():
            p = self.params.get(name)
            if p is None or tuple(p.shape) != shape:
                raise DimensionMismatch(f"parameter {name} must have shape {shape}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def n_parameters(self):
        return sum(p.numel() for p in self.params.values())

    def requires_grad_(self, flag=True):
        for p in self.params.values():
            p.requires_grad_(flag)
        return self

    def clone(self):
        return GruBlock(self.input_size, self.hidden_size, self.output_size, self.dropout,
                        {k: v.detach().clone().requires_grad_(v.requires_grad) for k, v in self.params.items()})

    def is_finite(self):
        return all(bool(torch.isfinite(p).all()) for p in self.params.values())


def param_shapes(D, H, O):
    """Parameter names and shapes in declaration (and serialization) order."""
    shapes = {}
    for layer in range(N_LAYERS):
        d_in = D if layer == 0 else H
        shapes[f"w_ih{layer}"] = (3 * H, d_in)
        shapes[f"w_hh{layer}"] = (3 * H, H)
        shapes[f"b_ih{layer}"] = (3 * H,)
        shapes[f"b_hh{layer}"] = (3 * H,)
    shapes["w_out"] = (O, D + H)
    shapes["b_out"] = (O,)
    return shapes


def _zero_params(D, H, O):
    return {k: torch.zeros(s, dtype=DTYPE) for k, s in param_shapes(D, H, O).items()}


def init_block(D, H, O, generator, dropout=0.0, out_scale=0.1):
    """Uniform(-1/sqrt(H), 1/sqrt(H)) recurrent weights; a smaller output layer."""
    params = {}
    bound = 1.0 / math.sqrt(H)
    for name, shape in param_shapes(D, H, O).items():
        b = out_scale / math.sqrt(D + H) if name == "w_out" else bound
        if name == "b_out":
            params[name] = torch.zeros(shape, dtype=DTYPE)
        else:
            params[name] = (torch.rand(shape, dtype=DTYPE, generator=generator) * 2.0 - 1.0) * b
    return GruBlock(D, H, O, dropout, params).requires_grad_(True)


def dropout_masks(block, batch, seed):
    """Per-layer variational masks on the recurrent state, fixed over time."""
    gen = torch.Generator().manual_seed(int(seed))
    keep = 1.0 - block.dropout
    return [(torch.rand((batch, block.hidden_size), dtype=DTYPE, generator=gen) < keep).to(DTYPE) / keep
            for _ in range(N_LAYERS)]


def _layer(x, h, w_ih, w_hh, b_ih, b_hh, mask):
    H = h.shape[-1]
    gi = x @ w_ih.T + b_ih  # (B, T, 3H), all steps at once
    outs = []
    for t in range(x.shape[1]):
        hd = h if mask is None else h * mask
        gh = hd @ w_hh.T + b_hh
        r = torch.sigmoid(gi[:, t, :H] + gh[:, :H])
        z = torch.sigmoid(gi[:, t, H:2 * H] + gh[:, H:2 * H])
        n = torch.tanh(gi[:, t, 2 * H:] + r * gh[:, 2 * H:])
        h = (1.0 - z) * h + z * n
        outs.append(h)
    return torch.stack(outs, dim=1), h


def gru_forward(block, inputs, h0=None, training=False, seed=0):
    """Run ``block`` over ``inputs`` of shape (T, D) or (B, T, D).

    Returns ``(outputs, h_final)`` with outputs (…, T, O) and h_final
    (N_LAYERS, B, H), or (N_LAYERS, H) for unbatched input.  Dropout acts on
    the hidden-to-hidden path only, and only when ``training`` is set.
    """
    x = torch.as_tensor(inputs, dtype=DTYPE)
    single = x.dim() == 2
    if single:
        x = x[None]
    if x.dim() != 3 or x.shape[-1] != block.input_size:
        raise DimensionMismatch(f"expected (..., T, {block.input_size}) inputs, got {tuple(x.shape)}")
    B, H = x.shape[0], block.hidden_size
    if h0 is None:
        h0 = torch.zeros((N_LAYERS, B, H), dtype=DTYPE)
    else:
        h0 = torch.as_tensor(h0, dtype=DTYPE)
        if single and h0.dim() == 2:
            h0 = h0[:, None]
        if tuple(h0.shape) != (N_LAYERS, B, H):
            raise DimensionMismatch(f"initial hidden must have shape {(N_LAYERS, B, H)}")
    masks = dropout_masks(block, B, seed) if training and block.dropout > 0 else [None] * N_LAYERS
    p = block.params
    seq, finals = x, []
    for layer in range(N_LAYERS):
        seq, h = _layer(seq, h0[layer], p[f"w_ih{layer}"], p[f"w_hh{layer}"], p[f"b_ih{layer}"],
                        p[f"b_hh{layer}"], masks[layer])
        finals.append(h)
    out = torch.cat([x, seq], dim=-1) @ p["w_out"].T + p["b_out"]
    h_final = torch.stack(finals)
    if single:
        return out[0], h_final[:, 0]
    return out, h_final


# --------------------------------------------------------------------------
# gradient checking


@dataclass(frozen=True)
class GradCheckResult:
    analytic: dict
    numeric: dict
    max_rel_error: float

    @property
    def passed(self):
        return self.max_rel_error < 1e-4


def _rel_error(a, n):
    scale = max(float(a.norm()), float(n.norm()))
    if scale == 0.0:
        return 0.0
    return float((a - n).norm()) / scale


def grad_check(tensors, closure, step=1e-5):
    """Compare autograd gradients of ``closure()`` against central differences.

    ``tensors`` maps names to leaf tensors that ``closure`` reads.  The error
    per tensor is normwise, ‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖), and the
    result carries the worst one.
    """
    if isinstance(tensors, GruBlock):
        tensors = tensors.params
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in tensors.items()}
    originals = dict(tensors)
    try:
        tensors.update(leaves)
        loss = closure()
        if not torch.isfinite(loss):
            raise NumericalOverflow("loss is not finite")
        grads = torch.autograd.grad(loss, list(leaves.values()), allow_unused=True)
        analytic = {k: (torch.zeros_like(v) if g is None else g.detach())
                    for (k, v), g in zip(leaves.items(), grads)}
        if not all(bool(torch.isfinite(g).all()) for g in analytic.values()):
            raise NumericalOverflow("gradient is not finite")
        numeric = {}
        with torch.no_grad():
            for k, v in leaves.items():
                g = torch.zeros_like(v)
                flat, gflat = v.view(-1), g.view(-1)
                for i in range(flat.numel()):
                    old = float(flat[i])
                    flat[i] = old + step
                    fp = float(closure())
                    flat[i] = old - step
                    fm = float(closure())
                    flat[i] = old
                    gflat[i] = (fp - fm) / (2.0 * step)
                if not bool(torch.isfinite(g).all()):
                    raise NumericalOverflow(f"finite-difference gradient of {k} is not finite")
                numeric[k] = g
    finally:
        tensors.update(originals)
    worst = max((_rel_error(analytic[k], numeric[k]) for k in leaves), default=0.0)
    return GradCheckResult(analytic, numeric, worst)


def gru_backward(block, loss):
    """Reverse-mode gradients of scalar ``loss`` for every block parameter."""
    if not torch.isfinite(loss):
        raise NumericalOverflow("loss is not finite")
    grads = torch.autograd.grad(loss, block.parameters(), allow_unused=True, retain_graph=True)
    return {k: (torch.zeros_like(p) if g is None else g) for (k, p), g in zip(block.named_parameters(), grads)}
