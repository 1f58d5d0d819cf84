"""Synthetic paired corpus for desk-scale work.

Clean utterances are harmonic tone stacks with slow amplitude-modulation
envelopes (speech-ish spectral structure without any dataset dependency);
noisy ones add lowpass-shaped noise scaled to an exact SNR from the standard
set {0, 5, 10, 15} dB. Everything derives from one seed, so a regenerated
corpus is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import TARGET_RATE, load_audio, write_wav

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
SNR_LEVELS_DB = (0.0, 5.0, 10.0, 15.0)


@dataclass
class CorpusPair:
    noisy_path: Path
    clean_path: Path
    snr_db: float | None = None


@dataclass
class CorpusManifest:
    root: Path
    pairs: list[CorpusPair]
    sample_rate: int
    total_duration: float


ROOM_TONE_AMP = 0.02    # ~-34 dBFS broadband floor under the clean signal


def _clean_utterance(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    t = np.arange(n) / rate
    out = np.zeros(n)
    for _ in range(int(rng.integers(2, 5))):
        f0 = float(rng.uniform(90.0, 350.0))
        env_rate = float(rng.uniform(1.0, 4.0))
        env_phase = float(rng.uniform(0.0, 2 * np.pi))
        env = 1.0 - 0.65 * 0.5 * (1.0 + np.sin(2 * np.pi * env_rate * t + env_phase))
        for harmonic in range(1, int(rng.integers(2, 5)) + 1):
            freq = f0 * harmonic
            if freq >= rate / 2:
                break
            amp = float(rng.uniform(0.05, 0.25)) / harmonic
            out += amp * env * np.sin(2 * np.pi * freq * t + float(rng.uniform(0, 2 * np.pi)))
    peak = np.abs(out).max()
    if peak > 0.6:
        out *= 0.6 / peak
    # recordings are never digitally silent between partials; a light room
    # tone keeps the log-power floor of "clean" bins at a realistic level
    out += ROOM_TONE_AMP * _shaped_noise(rng, n)
    return out


def _shaped_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """White noise through a short FIR lowpass (spectrum tilted low)."""
    kernel = np.hanning(64)
    kernel /= np.sqrt(np.sum(kernel ** 2))
    white = rng.standard_normal(n + kernel.size - 1)
    return np.convolve(white, kernel, mode="valid")


def generate_corpus(out_dir, n_utts: int, seed: int = 0,
                    duration_range: tuple[float, float] = (2.0, 6.0),
                    sample_rate: int = TARGET_RATE) -> Path:
    """Write paired clean/noisy WAVs plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    (out_dir / "noisy").mkdir(parents=True, exist_ok=True)
    pairs = []
    total = 0.0
    for idx in range(n_utts):
        rng = np.random.default_rng([seed, idx])
        duration = float(rng.uniform(*duration_range))
        n = int(round(duration * sample_rate))
        clean = _clean_utterance(rng, n, sample_rate)
        noise = _shaped_noise(rng, n)
        snr_db = float(SNR_LEVELS_DB[int(rng.integers(0, len(SNR_LEVELS_DB)))])
        clean_power = float(np.mean(clean ** 2))
        noise_power = float(np.mean(noise ** 2))
        target_noise_power = clean_power / (10.0 ** (snr_db / 10.0))
        noise *= np.sqrt(target_noise_power / noise_power)
        noisy = clean + noise
        peak = np.abs(noisy).max()
        if peak > 0.99:
            clean *= 0.99 / peak
            noisy *= 0.99 / peak
        clean_path = out_dir / "clean" / f"utt_{idx:04d}.wav"
        noisy_path = out_dir / "noisy" / f"utt_{idx:04d}.wav"
        write_wav(clean_path, clean, sample_rate)
        write_wav(noisy_path, noisy, sample_rate)
        pairs.append({"noisy": f"noisy/utt_{idx:04d}.wav",
                      "clean": f"clean/utt_{idx:04d}.wav",
                      "snr_db": snr_db, "duration": n / sample_rate})
        total += n / sample_rate
    manifest = {"version": MANIFEST_VERSION, "sample_rate": sample_rate,
                "total_duration": total, "pairs": pairs}
    manifest_path = out_dir / MANIFEST_NAME
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest_path


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path) as fh:
        data = json.load(fh)
    if data.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {data.get('version')}")
    root = path.parent
    pairs = [CorpusPair(noisy_path=root / p["noisy"], clean_path=root / p["clean"],
                        snr_db=p.get("snr_db"))
             for p in data["pairs"]]
    return CorpusManifest(root=root, pairs=pairs, sample_rate=int(data["sample_rate"]),
                          total_duration=float(data.get("total_duration", 0.0)))


def load_pairs(manifest: CorpusManifest) -> list[tuple[np.ndarray, np.ndarray]]:
    """Decode every pair, insisting on matched lengths."""
    out = []
    for pair in manifest.pairs:
        noisy = load_audio(pair.noisy_path)
        clean = load_audio(pair.clean_path)
        if noisy.size != clean.size:
            raise ValueError(
                f"{pair.noisy_path} and {pair.clean_path} decode to different "
                f"lengths ({noisy.size} vs {clean.size})")
        out.append((noisy, clean))
    return out
