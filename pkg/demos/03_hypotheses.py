"""Several 3D answers for one 2D observation.

Each noise draw yields a different deformation on top of one shared basis
shape. All hypotheses are consistent with the same camera; the one that
reprojects best is reported as the reconstruction.
"""

import numpy as np

from hypnrsfm.dataio import SynthConfig, center_frames, generate_synthetic
from hypnrsfm.model import init_params, reconstruct

frame = center_frames(generate_synthetic(SynthConfig(n_f=5, seed=2)))[0]
params = init_params(n_p=15, k_b=4, k_d=8, rng=np.random.default_rng(0))

hyp = reconstruct(params, frame.w, n_m=3, seed=4)
for m, err in enumerate(hyp.reproj_errors):
    tag = "  <- best" if m == hyp.best_index else ""
    print(f"hypothesis {m}: reprojection error {err:.3f}{tag}")

# the basis is shared, only the deformation changes between draws
gaps = [np.linalg.norm(h.value - hyp.basis.value) for h in hyp.hypotheses]
print("distance from basis:", np.round(gaps, 3))
