import io
import unittest

import librosa
import numpy as np
import soundfile as sf

from app.audio.dsp import (
    MelSpec,
    StftConfig,
    blur_bands,
    chunk,
    griffin_lim,
    linear_mel,
    mel_bin_of,
    mel_center_frequencies,
    mel_snr_db,
    mel_spectrogram,
    mix,
    shared_gain,
    stft_magnitude,
    sum_stems,
)
from app.audio.wav import Waveform, load_wav, resample, save_wav
from app.errors import AudioError, UnsupportedCodecError

SR = 22050


def sine(freq=440.0, seconds=1.0, sr=SR, amp=0.5) -> Waveform:
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


def wav_bytes(data: np.ndarray, sr: int, subtype: str) -> bytes:
    buf = io.BytesIO()
    sf.write(buf, data, sr, format="WAV", subtype=subtype)
    return buf.getvalue()


class WavTests(unittest.TestCase):
    def test_silence_round_trip(self):
        wave = load_wav(save_wav(Waveform.silence(1.0, SR)))
        self.assertEqual(len(wave), 22050)
        self.assertEqual(wave.sample_rate, SR)
        self.assertTrue(wave.is_silent())

    def test_noise_round_trip_within_one_lsb(self):
        rng = np.random.default_rng(0)
        wave = Waveform(rng.uniform(-0.9, 0.9, 5000), SR)
        back = load_wav(save_wav(wave))
        self.assertLessEqual(np.abs(back.samples - wave.samples).max(), 1.0 / 32768)

    def test_float_and_stereo(self):
        stereo = np.stack([np.full(100, 0.5), np.full(100, -0.25)], axis=1).astype(np.float32)
        wave = load_wav(wav_bytes(stereo, 8000, "FLOAT"))
        self.assertEqual(wave.sample_rate, 8000)
        np.testing.assert_allclose(wave.samples, 0.125, atol=1e-7)

    def test_adpcm_rejected_with_codec_name(self):
        data = wav_bytes(np.zeros(2048, np.float32), 8000, "IMA_ADPCM")
        with self.assertRaises(UnsupportedCodecError) as cm:
            load_wav(data)
        self.assertIn("IMA_ADPCM", str(cm.exception))

    def test_garbage_is_audio_error(self):
        with self.assertRaises(AudioError):
            load_wav(b"RIFF....not a wav")

    def test_resample_identity_and_pitch(self):
        wave = sine(440.0, 1.0, 44100)
        self.assertIs(resample(wave, 44100), wave)
        down = resample(wave, 22050)
        self.assertLessEqual(abs(len(down) - 22050), 1)
        spectrum = np.abs(np.fft.rfft(down.samples))
        freqs = np.fft.rfftfreq(len(down), 1.0 / 22050)
        self.assertLessEqual(abs(freqs[np.argmax(spectrum)] - 440.0), 1.0)

    def test_resample_dc(self):
        dc = Waveform(np.full(44100, 0.5), 44100)
        down = resample(dc, 22050)
        np.testing.assert_allclose(down.samples[1000:-1000], 0.5, atol=1e-3)


class ChunkTests(unittest.TestCase):
    def setUp(self):
        self.sr = 1000

    def _wave(self, seconds):
        return Waveform(np.ones(int(round(seconds * self.sr))), self.sr)

    def test_twelve_seconds_drops_short_tail(self):
        self.assertEqual(len(chunk(self._wave(12.0), 5.0)), 2)

    def test_exact_length(self):
        self.assertEqual(len(chunk(self._wave(5.0), 5.0)), 1)

    def test_long_tail_padded(self):
        parts = chunk(self._wave(7.6), 5.0)
        self.assertEqual(len(parts), 2)
        self.assertEqual(len(parts[1]), 5000)
        self.assertEqual(parts[1].samples[2599], 1.0)
        self.assertEqual(parts[1].samples[2600], 0.0)

    def test_keep_partial(self):
        self.assertEqual(len(chunk(self._wave(12.0), 5.0, keep_partial=True)), 3)


class MelSpectrogramTests(unittest.TestCase):
    def setUp(self):
        self.cfg = StftConfig()

    def test_silence_is_zero(self):
        spec = mel_spectrogram(Waveform.silence(2.0, SR), self.cfg)
        self.assertEqual(spec.values.shape, (64, 256))
        self.assertFalse(spec.values.any())

    def test_sine_peak_bin_and_constant_columns(self):
        wave = sine(440.0, (self.cfg.target_frames - 1) * self.cfg.hop / SR)
        spec = mel_spectrogram(wave, self.cfg)
        middle = spec.values[:, 4:-4]
        peaks = middle.argmax(axis=0)
        self.assertTrue(np.all(np.abs(peaks - mel_bin_of(440.0, self.cfg)) <= 1))
        np.testing.assert_allclose(middle, middle[:, :1].repeat(middle.shape[1], axis=1), atol=1e-2)

    def test_quiet_sine_peaks_at_one(self):
        # -30 dBFS
        quiet = sine(440.0, 2.0, amp=10 ** (-30 / 20))
        loud = sine(440.0, 2.0, amp=1.0)
        spec = mel_spectrogram(quiet, self.cfg)
        self.assertAlmostEqual(float(spec.values.max()), 1.0, places=5)
        self.assertAlmostEqual(spec.ref_db, mel_spectrogram(loud, self.cfg).ref_db - 30.0, delta=0.1)
        np.testing.assert_allclose(spec.values, mel_spectrogram(loud, self.cfg).values, atol=1e-3)

    def test_shared_reference(self):
        loud = mel_spectrogram(sine(440.0, 2.0, amp=1.0), self.cfg)
        quiet = mel_spectrogram(sine(440.0, 2.0, amp=0.1), self.cfg, ref_db=loud.ref_db)
        self.assertEqual(quiet.ref_db, loud.ref_db)
        # 20 dB down is a quarter of the 80 dB range
        self.assertAlmostEqual(float(quiet.values.max()), 0.75, delta=1e-3)

    def test_noise_shape_and_range(self):
        rng = np.random.default_rng(1)
        for seconds in (0.1, 3.0, 9.0):
            spec = mel_spectrogram(Waveform(rng.uniform(-1, 1, int(seconds * SR)), SR), self.cfg)
            self.assertEqual(spec.values.shape, self.cfg.shape)
            self.assertGreaterEqual(spec.values.min(), 0.0)
            self.assertLessEqual(spec.values.max(), 1.0)

    def test_deterministic(self):
        wave = sine(220.0, 1.0)
        self.assertEqual(mel_spectrogram(wave, self.cfg), mel_spectrogram(wave, self.cfg))

    def test_short_input_rejected(self):
        with self.assertRaises(AudioError):
            mel_spectrogram(Waveform(np.zeros(100), SR), self.cfg)

    def test_wrong_rate_rejected(self):
        with self.assertRaises(AudioError):
            mel_spectrogram(sine(440.0, 1.0, 16000), self.cfg)

    def test_config_invariants(self):
        with self.assertRaises(ValueError):
            StftConfig(n_fft=1000)
        with self.assertRaises(ValueError):
            StftConfig(hop=2048)
        with self.assertRaises(ValueError):
            StftConfig(n_mels=4)
        self.assertEqual(StftConfig.preset("riffusion512").shape, (512, 512))

    def test_linear_mel_triangle_inequality(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            stems = [Waveform(rng.uniform(-0.3, 0.3, 4096), SR) for _ in range(3)]
            total = linear_mel(sum_stems(stems), self.cfg)
            bound = sum(linear_mel(s, self.cfg) for s in stems)
            self.assertTrue(np.all(total <= bound + 1e-6))

    def test_parseval_white_noise(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(SR * 5) * 0.1
        mag = stft_magnitude(Waveform(x, SR), self.cfg)
        window = librosa.filters.get_window("hann", self.cfg.n_fft, fftbins=True)
        raw = mag * (window.sum() / 2.0)
        # one-sided -> two-sided, interior bins counted twice
        two_sided = (raw[0] ** 2).sum() + 2 * (raw[1:-1] ** 2).sum() + (raw[-1] ** 2).sum()
        expected = self.cfg.n_fft * (window ** 2).sum() / self.cfg.hop * (x ** 2).sum()
        self.assertAlmostEqual(two_sided / expected, 1.0, delta=0.1)


class GriffinLimTests(unittest.TestCase):
    def setUp(self):
        self.cfg = StftConfig()

    def test_tone_reconstruction(self):
        wave = sine(440.0, 2.0)
        spec = mel_spectrogram(wave, self.cfg)
        recon = griffin_lim(spec, self.cfg, iters=32, length=len(wave))
        self.assertEqual(len(recon), len(wave))
        self.assertAlmostEqual(recon.peak, 1.0, places=6)
        self.assertGreaterEqual(mel_snr_db(wave, recon, self.cfg), 20.0)

        rebuilt = mel_spectrogram(recon, self.cfg).values[:, 4:80]
        peaks = rebuilt.argmax(axis=0)
        self.assertTrue(np.all(np.abs(peaks - mel_bin_of(440.0, self.cfg)) <= 1))

    def test_zero_spec_is_silence(self):
        recon = griffin_lim(MelSpec.zeros(self.cfg), self.cfg, length=4096)
        self.assertTrue(recon.is_silent())
        self.assertEqual(len(recon), 4096)

    def test_iters_validated(self):
        with self.assertRaises(ValueError):
            griffin_lim(MelSpec.zeros(self.cfg), self.cfg, iters=0)


class MixTests(unittest.TestCase):
    def test_mix_with_silence_is_identity(self):
        w = sine(330.0, 0.5)
        self.assertEqual(mix([w, Waveform(np.zeros(len(w)), SR)]), w)

    def test_mix_matches_direct_sum(self):
        rng = np.random.default_rng(4)
        stems = [Waveform(rng.uniform(-0.2, 0.2, 2000), SR) for _ in range(3)]
        direct = stems[0].samples + stems[1].samples + stems[2].samples
        np.testing.assert_allclose(mix(stems).samples, direct, atol=1e-7)

    def test_shared_gain_keeps_balance(self):
        loud = Waveform(np.full(100, 0.8), SR)
        quiet = Waveform(np.full(100, 0.4), SR)
        gain = shared_gain([loud, quiet])
        self.assertAlmostEqual(gain, 1.0 / 1.2)
        full = mix([loud, quiet], gain)
        partial = mix([quiet], gain)
        np.testing.assert_allclose(full.samples - partial.samples, loud.samples * gain, atol=1e-12)
        self.assertLessEqual(full.peak, 1.0)

    def test_errors(self):
        with self.assertRaises(AudioError):
            mix([])
        with self.assertRaises(AudioError):
            mix([Waveform(np.zeros(10), SR), Waveform(np.zeros(11), SR)])
        with self.assertRaises(AudioError):
            mix([Waveform(np.zeros(10), SR), Waveform(np.zeros(10), 16000)])


class BlurBandsTests(unittest.TestCase):
    def test_only_selected_rows_change(self):
        cfg = StftConfig()
        rng = np.random.default_rng(5)
        spec = MelSpec(rng.uniform(0, 1, cfg.shape), cfg)
        centers = mel_center_frequencies(cfg)
        blurred = blur_bands(spec, [(1000.0, 4000.0)], sigma=2.0)
        inside = (centers >= 1000.0) & (centers <= 4000.0)
        np.testing.assert_array_equal(blurred.values[~inside], spec.values[~inside])
        self.assertGreater(np.abs(blurred.values[inside] - spec.values[inside]).max(), 0.0)


if __name__ == "__main__":
    unittest.main()
