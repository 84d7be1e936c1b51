"""Pair visible and thermal frames by pose similarity after alignment."""
import numpy as np

from thermvis import dataset, sync

for k in (2, 5, 9):
    vis, thr = dataset.paired_tracks(n_frames=30, offset=k, noise_sigma_px=1.0, seed=k)
    result = sync.synchronize(vis, thr, align=True, threads=4)
    pairs = result.as_dict()
    interior = range(30 - k)
    hits = sum(pairs[i] == i + k for i in interior)
    lags = np.array([pairs[i] - i for i in interior])
    print(f"injected lag {k}: recovered on {hits}/{len(interior)} frames, median lag {np.median(lags):.0f}")

# several visible frames can share one thermal frame
vis, thr = dataset.paired_tracks(12, 0, 0.0, seed=0)
sparse = sync.KeypointTrack(thr.frames[::4], sync.Spectrum.THERMAL)
print(sync.synchronize(vis, sparse, align=True).as_dict())
