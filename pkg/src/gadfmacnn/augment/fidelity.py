"""How close synthetic images are to the real ones they were trained on."""
from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import numpy as np

from ..gafenc import GafImage, gram_matrix


def _by_class(images: Sequence[GafImage]) -> dict[int, np.ndarray]:
    groups: dict[int, list] = defaultdict(list)
    for im in images:
        groups[int(im.label)].append(np.asarray(im.pixels, dtype=np.float64))
    return {k: np.stack(v) for k, v in groups.items()}


def moment_distance(real: np.ndarray, synth: np.ndarray) -> dict[str, float]:
    dm = abs(float(real.mean()) - float(synth.mean()))
    ds = abs(float(real.std()) - float(synth.std()))
    return {"mean_abs_diff": dm, "std_abs_diff": ds, "distance": float(np.hypot(dm, ds))}


def nearest_real_distances(real: np.ndarray, synth: np.ndarray) -> np.ndarray:
    """Per synthetic image, RMS pixel distance to its closest real image."""
    r = real.reshape(real.shape[0], -1)
    s = synth.reshape(synth.shape[0], -1)
    # direct differences rather than the |a|^2 + |b|^2 - 2ab expansion, so exact copies give exactly 0
    d2 = np.array([((r - row) ** 2).sum(axis=1).min() for row in s])
    return np.sqrt(d2 / r.shape[1])


def mean_row_gram(images: np.ndarray) -> np.ndarray:
    """Average over images of the Gram matrix of each image's rows."""
    return np.mean([gram_matrix(im) for im in images], axis=0) / images.shape[-1]


def gram_similarity(real: np.ndarray, synth: np.ndarray) -> float:
    """1 - relative Frobenius distance between mean row-Gram matrices (1 means identical)."""
    gr, gs = mean_row_gram(real), mean_row_gram(synth)
    denom = np.linalg.norm(gr) + np.linalg.norm(gs)
    if denom == 0:
        return 1.0
    return float(1.0 - np.linalg.norm(gr - gs) / denom)


def fidelity_report(real: Sequence[GafImage], synthetic: Sequence[GafImage]) -> dict:
    if not real or not synthetic:
        raise ValueError("both image sets must be nonempty")
    real_c, syn_c = _by_class(real), _by_class(synthetic)
    classes = {}
    for label in sorted(syn_c):
        if label not in real_c:
            continue
        r, s = real_c[label], syn_c[label]
        nn = nearest_real_distances(r, s)
        classes[str(label)] = {
            "n_real": int(r.shape[0]),
            "n_synthetic": int(s.shape[0]),
            "moments": moment_distance(r, s),
            "nearest_real": {"min": float(nn.min()), "median": float(np.median(nn)),
                             "mean": float(nn.mean()), "max": float(nn.max())},
            "nearest_real_all": nn.tolist(),
            "gram_similarity": gram_similarity(r, s),
        }
    return {"classes": classes}
