"""Central finite-difference oracle for gradient tests."""

import torch


def grad_mismatch_fraction(
    make_scalar,
    tensors,
    samples: int = 300,
    h: float = 1e-6,
    tol: float = 1e-3,
    seed: int = 0,
) -> float:
    """Fraction of sampled coordinates where autograd disagrees with a
    central finite difference by more than `tol` relative error.

    `make_scalar` must rebuild the graph on every call; `tensors` are the
    double-precision leaves (inputs and/or parameters) to probe.
    """
    gen = torch.Generator().manual_seed(seed)
    grads = torch.autograd.grad(make_scalar(), tensors)
    sizes = [t.numel() for t in tensors]
    total = sum(sizes)
    count = min(samples, total)
    picks = torch.randperm(total, generator=gen)[:count]
    bad = 0
    for pick in picks.tolist():
        index = 0
        while pick >= sizes[index]:
            pick -= sizes[index]
            index += 1
        leaf = tensors[index]
        with torch.no_grad():
            original = leaf.view(-1)[pick].item()
            leaf.view(-1)[pick] = original + h
            f_plus = float(make_scalar())
            leaf.view(-1)[pick] = original - h
            f_minus = float(make_scalar())
            leaf.view(-1)[pick] = original
        fd = (f_plus - f_minus) / (2.0 * h)
        an = grads[index].reshape(-1)[pick].item()
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
        if rel > tol:
            bad += 1
    return bad / count
