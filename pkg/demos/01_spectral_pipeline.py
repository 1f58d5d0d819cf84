"""Walk through the spectral front end on a synthetic utterance.

Shows the STFT/LPS analysis path, per-bin normalization statistics, and the
reconstruction path (estimated magnitudes under the noisy phase), ending with
the round-trip error you give up by working in the log-power domain.

Run:  python demos/01_spectral_pipeline.py
"""

import numpy as np

from tfcn import StftConfig, compute_norm_stats, istft, lps, reconstruct, stft

rng = np.random.default_rng(0)
rate = 16000

# a two-tone "utterance" with band-limited noise
t = np.arange(2 * rate) / rate
clean = 0.3 * np.sin(2 * np.pi * 440 * t) + 0.15 * np.sin(2 * np.pi * 1320 * t)
kernel = np.hanning(32)
kernel /= kernel.sum()
noise = 0.05 * np.convolve(rng.standard_normal(clean.size + 31), kernel, "valid")
noisy = clean + noise

cfg = StftConfig()
print(f"frame length {cfg.frame_len}, hop {cfg.hop}, {cfg.bins} bins")

spec = stft(noisy)
print(f"{noisy.size} samples -> {spec.shape[0]} frames x {spec.shape[1]} bins")

feats = lps(spec)
print(f"log power spectrum: {feats.shape} (last STFT bin dropped)")
tone_bin = round(440 / rate * cfg.frame_len)
print(f"440 Hz lands in bin {tone_bin}: mean level {feats[:, tone_bin].mean():+.1f} "
      f"vs quiet bin 200: {feats[:, 200].mean():+.1f}")

norm = compute_norm_stats([feats])
z = norm.normalize(feats)
print(f"normalized input: mean {z.mean():+.3f}, std {z.std():.3f}")
back = norm.denormalize(z)
print(f"denormalize(normalize(x)) max error: {np.abs(back - feats).max():.2e}")

# a perfect network would output the clean LPS; reconstruct with noisy phase
target = lps(stft(clean[:noisy.size]))
rebuilt = istft(reconstruct(target, spec))
n = rebuilt.size
err = rebuilt[512:-512] - clean[512:n - 512]
snr = 10 * np.log10(np.sum(clean[512:n - 512] ** 2) / np.sum(err ** 2))
print(f"oracle magnitudes + noisy phase -> {snr:.1f} dB SNR against clean "
      f"(the phase is the ceiling)")

round_trip = istft(reconstruct(feats, spec))
err = round_trip[512:-512] - noisy[512:n - 512]
snr = 10 * np.log10(np.sum(noisy[512:n - 512] ** 2) / np.sum(err ** 2))
print(f"identity mapping round trip: {snr:.1f} dB SNR against the noisy input")
