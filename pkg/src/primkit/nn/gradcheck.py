"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .layers import Dropout, ReLU

FD_STEP = 1e-5
#: denominators below this are clamped so FP noise on near-zero gradients is not amplified
REL_FLOOR = 1e-4


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_param: dict = field(default_factory=dict)
    n_checked: int = 0
    n_skipped: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance and self.n_checked > 0)

    @property
    def failures(self):
        return {k: v for k, v in self.per_param.items() if v >= self.tolerance}


def relative_error(a, n, floor=REL_FLOOR):
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor), initial=0.0))


def gradient_check(graph, x, labels=None, tolerance=1e-4, h=FD_STEP, max_entries=None, seed=0,
                   check_input=True):
    """Compare analytic gradients of ``graph`` with central differences.

    The graph is deep-copied and promoted to float64. With ``labels`` the
    loss is softmax cross-entropy on the output; otherwise it is a fixed
    random projection of the output. ``max_entries`` limits how many
    entries per parameter tensor are probed (``None`` probes all).
    Dropout masks are frozen after the first pass so the loss is a
    deterministic function of the parameters. A probe whose +/-h
    evaluation flips any ReLU mask straddles a kink, where the central
    difference is not a derivative; such probes are skipped and counted
    in ``n_skipped``.
    """
    g = copy.deepcopy(graph).astype(np.float64).train()
    x = np.asarray(x, dtype=np.float64).copy()
    rng = np.random.default_rng(seed)
    dropouts = [m for m in g.modules() if isinstance(m, Dropout)]
    for m in dropouts:
        m.frozen = True
        m._mask = None
    buffers = {k: v.copy() for k, v in g.named_buffers()}

    out = g.forward(x)
    relus = [m for m in g.modules() if isinstance(m, ReLU)]
    base_masks = [m._mask.copy() for m in relus]
    proj = None if labels is not None else rng.standard_normal(out.shape)

    def loss_and_grad_out(o):
        if labels is not None:
            loss, _, grad = F.softmax_cross_entropy(o, labels, n_labels=o.shape[1])
            return loss, grad
        return float(np.sum(o * proj)), proj

    _, grad_out = loss_and_grad_out(out)
    dx = g.backward(grad_out)
    analytic = {name: gr.copy() for name, _, gr in g.named_parameters()}

    def loss_at():
        loss = loss_and_grad_out(g.forward(x))[0]
        smooth = all(np.array_equal(m._mask, b) for m, b in zip(relus, base_masks))
        return loss, smooth

    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    targets = [(name, p, analytic[name]) for name, p, _ in g.named_parameters()]
    if check_input:
        targets.append(("input", x, dx))
    for name, arr, ana in targets:
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        num = np.empty(idx.size)
        keep = np.ones(idx.size, dtype=bool)
        for j, i in enumerate(idx):
            v = flat[i]
            flat[i] = v + h
            lp, ok_p = loss_at()
            flat[i] = v - h
            lm, ok_m = loss_at()
            flat[i] = v
            num[j] = (lp - lm) / (2 * h)
            keep[j] = ok_p and ok_m
        err = relative_error(ana.reshape(-1)[idx][keep], num[keep])
        report.per_param[name] = err
        report.n_checked += int(keep.sum())
        report.n_skipped += int((~keep).sum())
        report.max_rel_error = max(report.max_rel_error, err)

    for k, v in g.named_buffers():
        v[...] = buffers[k]
    return report
