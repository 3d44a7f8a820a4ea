"""
stemctl: make-corpus, train, train-embedder, generate, baseline, evaluate, render.

Progress goes to stdout as tagged lines. A failing command prints one JSON
line {"error": <type>, "message": <text>} to stderr and exits 1.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import shutil
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from app import tensorio
from app.audio.dsp import MelSpec, StftConfig, griffin_lim, mel_spectrogram, mix, shared_gain
from app.audio.wav import Waveform, read_wav_file, resample, write_wav_file
from app.data.corpus import generate_toy_corpus
from app.data.manifest import SPLITS, assign_splits, read_manifest, select, write_manifest
from app.data.rolls import build_roll_chunks
from app.data.triplets import Triplet, build_triplets, load_separated_session
from app.diffusion.binary import RejectionConfig, binary_sample, binary_train_step
from app.diffusion.checkpoint import Checkpoint, load_checkpoint, restore_optimizer, save_model
from app.diffusion.model import DenoiserModel, ModelConfig
from app.diffusion.sample import SamplerConfig, sample_insert_batch, sample_sdedit_batch
from app.diffusion.schedule import DiffusionSchedule
from app.diffusion.train import TrainState, seed_all, train_loop, train_step
from app.errors import CheckpointError, DatasetError, StemDiffError
from app.instruct.llm import LlmClientConfig, llm_instruction
from app.instruct.templates import EditInstruction, short_caption, template_instruction
from app.metrics.embedder import EmbedderConfig, EmbedderTrainConfig, load_embedder, save_embedder, train_embedder
from app.metrics.onset import onset_alignment
from app.metrics.report import evaluate_pairs
from app.render import hstack, render_mel, render_roll, render_triptych, write_png
from app.settings import RunConfig, load_run_config
from app.symbolic.roll import bars_for, from_pianoroll, note_density, slice_bars, subtract_channel, to_pianoroll
from app.symbolic.smf import parse_midi, write_midi
from app.symbolic.types import DEFAULT_STEPS_PER_BAR, Instrument, MidiDocument, PianoRoll

CHECKPOINT_NAME = "checkpoint.stwd"
LOSS_LOG = "loss.csv"
GENERATIONS_NAME = "generations.stwd"
GENERATIONS_KIND = "generations"
REPORT_NAME = "report.json"
EMBEDDER_NAMES = ("fd", "fad")
ONSET_PASS = 0.7
SAMPLE_BATCH = 8
MIDI_SUFFIXES = (".mid", ".midi")


# =============================================================================
# Shared helpers
# =============================================================================

def _run_config(args: argparse.Namespace, flags: Dict[str, object] | None = None) -> RunConfig:
    return load_run_config(args.config, args.set or (), flags)


def _prepare_output(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise DatasetError(f"{out} is not empty; pass --force to overwrite it")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def _model_config(run: RunConfig, domain: str) -> ModelConfig:
    context = 2 if domain == "roll" else 1
    return ModelConfig(**{**run.model.model_dump(), "in_channels": 1 + context, "out_channels": 1})


def _domain(ckpt: Checkpoint) -> str:
    return "roll" if ckpt.metadata.get("method") == "binary" else "spectrogram"


def _stft_for(ckpt: Checkpoint, run: RunConfig) -> StftConfig:
    stft = ckpt.metadata.get("stft")
    return StftConfig(**stft) if stft else run.stft()


def _sampler(run: RunConfig, args: argparse.Namespace) -> SamplerConfig:
    flags = {
        "steps": args.steps, "seed": args.seed, "mode": getattr(args, "mode", None),
        "guidance_text": getattr(args, "guidance_text", None),
        "guidance_image": getattr(args, "guidance_image", None),
    }
    return SamplerConfig(**{**run.sampler.model_dump(), **{k: v for k, v in flags.items() if v is not None}})


def _batched(items: Sequence, size: int = SAMPLE_BATCH):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def _instruction_fn(run: RunConfig):
    if not run.corpus.use_llm:
        return None
    client = LlmClientConfig.from_env()

    def make(stem: str, tags: Sequence[str], seed: int) -> EditInstruction:
        caption = f"A {' '.join(tags)} song" if tags else "A song"
        return llm_instruction(caption, stem, client, tags, seed)

    return make


def _stack(specs: Sequence[MelSpec]) -> np.ndarray:
    return np.stack([s.values for s in specs]).astype(np.float32)


def write_generation_set(out: Path, domain: str, method: str, generated: np.ndarray,
                         meta: Dict, **tensors: np.ndarray) -> Path:
    """One file per generation run: the generated stack plus whatever it is compared against."""
    out.mkdir(parents=True, exist_ok=True)
    path = out / GENERATIONS_NAME
    tensorio.save(path, {"generated": generated.astype(np.float32), **tensors},
                  {"kind": GENERATIONS_KIND, "domain": domain, "method": method, **meta})
    print(f"[Sample] wrote {len(generated)} {domain} generations ({method}) to {path}")
    return path


def read_generation_set(directory: str | Path) -> Tuple[Dict[str, np.ndarray], Dict]:
    path = Path(directory)
    if path.is_dir():
        path = path / GENERATIONS_NAME
    if not path.exists():
        raise DatasetError(f"no {GENERATIONS_NAME} at {path}; run `generate --manifest` or `baseline` first")
    tensors, meta = tensorio.load(path)
    if meta.get("kind") != GENERATIONS_KIND:
        raise DatasetError(f"{path} is a '{meta.get('kind')}' file, not a generation set")
    return tensors, meta


def _specs(stack: np.ndarray, cfg: StftConfig) -> List[MelSpec]:
    return [MelSpec(np.clip(a, 0.0, 1.0), cfg) for a in stack]


# =============================================================================
# make-corpus
# =============================================================================

def cmd_make_corpus(args: argparse.Namespace) -> int:
    run = _run_config(args, {
        "corpus_dir": args.out, "corpus.sessions": args.sessions, "corpus.seed": args.seed,
        "corpus.styles": args.style, "corpus.bars": args.bars,
    })
    out = Path(run.corpus_dir)
    cc = run.corpus
    cfg = run.stft()
    corpus = generate_toy_corpus(cc.seed, cc.sessions, cc.styles, cc.bars, cfg.sample_rate)
    _prepare_output(out, args.force)
    make = _instruction_fn(run)

    items: List = []
    pairs = list(zip(corpus.sessions, corpus.documents))
    for i, (session, doc) in enumerate(tqdm(pairs, desc="Sessions", disable=args.quiet)):
        for target in cc.targets:
            items += build_triplets(session, target, cfg, cc.chunk_seconds, seed=i, instruction_fn=make,
                                    blur=cc.blur_bands or None, blur_sigma=cc.blur_sigma)
            items += build_roll_chunks(doc, Instrument.parse(target), cc.roll_bars_per_chunk,
                                       session.tags, session.session_id, session.label)

    splits = assign_splits([s.session_id for s in corpus.sessions], cc.test_fraction, cc.seed)
    write_manifest(items, out, splits)
    run.write_effective(out)
    for split in SPLITS:
        n_trip = sum(1 for it in items if isinstance(it, Triplet) and splits[it.session_id] == split)
        n_roll = sum(1 for it in items if not isinstance(it, Triplet) and splits[it.session_id] == split)
        print(f"[Corpus] {split}: {n_trip} triplets, {n_roll} roll chunks")
    return 0


# =============================================================================
# train
# =============================================================================

def cmd_train(args: argparse.Namespace) -> int:
    run = _run_config(args, {
        "corpus_dir": args.manifest, "run_dir": args.run_dir, "train.max_steps": args.steps,
        "train.batch_size": args.batch_size, "train.seed": args.seed,
        "train.text_only": True if args.text_only else None,
    })
    domain = "roll" if args.kind == "roll" else "spectrogram"
    if domain == "roll" and run.train.text_only:
        raise DatasetError("--text-only applies to spectrogram models only")
    entries = read_manifest(run.corpus_dir)
    items = select(entries, "roll" if domain == "roll" else "triplet", "train", args.target)
    if not items:
        raise DatasetError(f"no training {domain} items for target '{args.target}' in {run.corpus_dir}")

    run_dir = Path(run.run_dir)
    run.write_effective(run_dir)
    method = "binary" if domain == "roll" else ("prior" if run.train.text_only else "subtractive")

    ckpt: Optional[Checkpoint] = None
    start = 0
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        if ckpt.metadata.get("method") != method or ckpt.metadata.get("target") != args.target:
            raise CheckpointError(
                f"{args.resume} holds a '{ckpt.metadata.get('method')}' model for "
                f"'{ckpt.metadata.get('target')}', not '{method}' for '{args.target}'"
            )
        start = ckpt.step
    generator = seed_all(run.train.seed + start)
    if ckpt is not None:
        model, schedule = ckpt.model, ckpt.schedule
    else:
        model, schedule = DenoiserModel(_model_config(run, domain)), DiffusionSchedule()

    state = TrainState.create(model, run.train, start_step=start)
    if ckpt is not None:
        restore_optimizer(state.optimizer, model, ckpt)
    remaining = run.train.max_steps - start
    if remaining <= 0:
        print(f"[Train] checkpoint is already at step {start} >= max_steps {run.train.max_steps}")
        return 0

    extra = {"config_hash": run.config_hash}
    if domain == "spectrogram":
        extra["stft"] = items[0].full.config.model_dump()
    ckpt_path = run_dir / CHECKPOINT_NAME
    log_path = run_dir / LOSS_LOG
    print(f"[Train] {method} model for '{args.target}': {len(items)} items, "
          f"steps {start} -> {run.train.max_steps}, run dir {run_dir}")

    def on_checkpoint(s: TrainState) -> None:
        save_model(ckpt_path, s.model, schedule, s.step, args.target, method, s.optimizer, extra)

    fresh = not (args.resume and log_path.exists())
    with open(log_path, "w" if fresh else "a", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if fresh:
            writer.writerow(["step", "lr", "loss"])

        def on_log(step: int, lr: float, loss: float) -> None:
            writer.writerow([step, f"{lr:.8e}", f"{loss:.6f}"])

        step_fn = binary_train_step if domain == "roll" else train_step
        losses = train_loop(state, items, schedule, remaining, generator, step_fn=step_fn,
                            on_log=on_log, on_checkpoint=on_checkpoint, show_progress=not args.quiet)
    on_checkpoint(state)
    print(f"[Train] done at step {state.step}; final loss {losses[-1]:.4f}")
    return 0


# =============================================================================
# train-embedder
# =============================================================================

def cmd_train_embedder(args: argparse.Namespace) -> int:
    run = _run_config(args, {"corpus_dir": args.manifest, "metrics.embedder_epochs": args.epochs})
    entries = read_manifest(run.corpus_dir)
    seen, specs, labels = set(), [], []
    # every target shares the same full mix; keep one per chunk
    for t in select(entries, "triplet", "train"):
        key = (t.session_id, t.chunk_index)
        if key in seen:
            continue
        if t.label is None:
            raise DatasetError(f"triplet {t.session_id}#{t.chunk_index} has no class label")
        seen.add(key)
        specs.append(t.full)
        labels.append(t.label)

    out = Path(args.out or Path(run.run_dir) / run.metrics.embedder_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_cfg = EmbedderTrainConfig(epochs=run.metrics.embedder_epochs, seed=run.train.seed)
    for name in EMBEDDER_NAMES:
        result = train_embedder(specs, labels, EmbedderConfig.preset(name), train_cfg, show_progress=not args.quiet)
        save_embedder(out / f"{name}.stwd", result.embedder,
                      {"holdout_accuracy": result.holdout_accuracy, "final_loss": result.final_loss})
    print(f"[Eval] embedders written to {out}")
    return 0


# =============================================================================
# generate
# =============================================================================

def _instruction(args: argparse.Namespace, stem: str) -> EditInstruction:
    if args.instruction:
        return EditInstruction(args.instruction, stem)
    return template_instruction(stem)


def insert_into_waveform(model: DenoiserModel, schedule: DiffusionSchedule, cfg: StftConfig,
                         scfg: SamplerConfig, wave: Waveform, instruction: EditInstruction | str,
                         gl_iters: int = 32) -> Tuple[Waveform, List[MelSpec], List[MelSpec]]:
    """
    Cut the partial mix into model-sized windows, insert the stem in each
    and resynthesize. The result has the input's length and sample rate.
    """
    if len(wave) == 0:
        raise DatasetError("input waveform is empty")
    work = resample(wave, cfg.sample_rate)
    span = (cfg.target_frames - 1) * cfg.hop
    pieces = [work.samples[i:i + span] for i in range(0, len(work), span)]
    partials = [mel_spectrogram(Waveform(np.pad(p, (0, span - len(p))), cfg.sample_rate), cfg) for p in pieces]

    generated: List[MelSpec] = []
    for batch in _batched(partials):
        generated += sample_insert_batch(model, batch, [instruction] * len(batch), scfg, schedule)
    audio = [griffin_lim(g, cfg, gl_iters, length=span, seed=scfg.seed).samples[:len(p)]
             for g, p in zip(generated, pieces)]
    out = resample(Waveform(np.concatenate(audio), cfg.sample_rate), wave.sample_rate)
    samples = np.pad(out.samples, (0, max(0, len(wave) - len(out))))[:len(wave)]
    return Waveform(samples, wave.sample_rate), partials, generated


def insert_into_midi(model: DenoiserModel, schedule: DiffusionSchedule, scfg: SamplerConfig,
                     rejection: RejectionConfig, doc: MidiDocument, target: Instrument,
                     instruction: Optional[str] = None) -> Tuple[MidiDocument, PianoRoll]:
    """
    Replace the target part of a MIDI file with a generated one. Context
    tracks are copied note for note from the input.
    """
    if model.sample_shape is None:
        raise CheckpointError("checkpoint does not record the roll shape it was trained on")
    steps, n_pitches = model.sample_shape
    bars_per_chunk = max(1, steps // DEFAULT_STEPS_PER_BAR)
    n_chunks = max(1, math.ceil(bars_for(doc) / bars_per_chunk))
    roll = to_pianoroll(doc, DEFAULT_STEPS_PER_BAR, bars=n_chunks * bars_per_chunk, n_pitches=n_pitches)
    context, _ = subtract_channel(roll, target)

    pieces = []
    for i in range(n_chunks):
        piece = slice_bars(context, i * bars_per_chunk, bars_per_chunk)
        chunk_cfg = scfg.model_copy(update={"seed": scfg.seed + i})
        generated, attempts = binary_sample(model, piece, target, chunk_cfg, schedule, rejection, instruction)
        print(f"[Sample] chunk {i}: accepted after {attempts} attempt(s), "
              f"density {note_density(generated, target):.3f}")
        pieces.append(generated.data)
    full = context.with_data(np.concatenate(pieces, axis=1))

    part = from_pianoroll(subtract_channel(full, target)[1], doc.tempo_bpm, doc.ticks_per_quarter)
    tracks = tuple(
        tuple(part.notes(inst)) if inst == target else tuple(doc.notes(inst))
        for inst in Instrument
    )
    return MidiDocument(doc.ticks_per_quarter, doc.tempo_map, tracks), full


def _generate_manifest(args, run, ckpt, scfg, out: Path) -> None:
    entries = read_manifest(args.manifest)
    target = ckpt.metadata.get("target") or args.stem
    meta = {"target": target, "config_hash": run.config_hash}
    if _domain(ckpt) == "roll":
        chunks = select(entries, "roll", args.split, target)[:args.limit]
        if not chunks:
            raise DatasetError(f"no {args.split} roll chunks for '{target}' in {args.manifest}")
        rolls = []
        for c in tqdm(chunks, desc="Sampling", disable=args.quiet):
            context, _ = subtract_channel(c.roll, c.target_instrument)
            chunk_cfg = scfg.model_copy(update={"seed": scfg.seed + c.chunk_index})
            generated, _ = binary_sample(ckpt.model, context, c.target_instrument, chunk_cfg, ckpt.schedule,
                                         run.rejection)
            rolls.append(generated.data)
        first = chunks[0].roll
        write_generation_set(out, "roll", "binary", np.stack(rolls),
                             {**meta, "steps_per_bar": first.steps_per_bar, "pitch_base": first.pitch_base},
                             truth=np.stack([c.roll.data for c in chunks]).astype(np.float32))
        return

    triplets = select(entries, "triplet", args.split, target)[:args.limit]
    if not triplets:
        raise DatasetError(f"no {args.split} triplets for '{target}' in {args.manifest}")
    generated: List[MelSpec] = []
    for batch in tqdm(list(_batched(triplets)), desc="Sampling", disable=args.quiet):
        generated += sample_insert_batch(ckpt.model, [t.partial for t in batch],
                                         [t.instruction for t in batch], scfg, ckpt.schedule)
    write_generation_set(out, "spectrogram", ckpt.metadata.get("method", "subtractive"), _stack(generated),
                         {**meta, "stft": triplets[0].full.config.model_dump()},
                         target=_stack([t.full for t in triplets]), partial=_stack([t.partial for t in triplets]))
    write_png(out / "triptych.png", render_triptych(triplets[0].full, triplets[0].partial, generated[0]))


def cmd_generate(args: argparse.Namespace) -> int:
    run = _run_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    scfg = _sampler(run, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = args.stem or ckpt.metadata.get("target") or "drums"

    if args.manifest:
        _generate_manifest(args, run, ckpt, scfg, out)
        return 0

    if args.input and Path(args.input).suffix.lower() in MIDI_SUFFIXES:
        if _domain(ckpt) != "roll":
            raise CheckpointError(f"{args.checkpoint} is a spectrogram model; MIDI input needs a roll model")
        doc = parse_midi(Path(args.input).read_bytes())
        target = Instrument.parse(stem)
        result, roll = insert_into_midi(ckpt.model, ckpt.schedule, scfg, run.rejection, doc, target,
                                        args.instruction)
        (out / "generated.mid").write_bytes(write_midi(result, doc.ticks_per_quarter))
        write_png(out / "roll.png", render_roll(roll, generated=target))
        print(f"[Sample] wrote {out / 'generated.mid'}")
        return 0

    if _domain(ckpt) == "roll":
        raise CheckpointError(f"{args.checkpoint} is a piano-roll model; audio input needs a spectrogram model")
    cfg = _stft_for(ckpt, run)
    instruction = _instruction(args, stem)
    if args.stems_dir:
        # restyle: drop the named stem from a separated session and re-insert it
        session = load_separated_session(args.stems_dir, sample_rate=cfg.sample_rate)
        if stem not in session.stems:
            raise DatasetError(f"{args.stems_dir} has no '{stem}.wav' (stems: {', '.join(session.stems)})")
        everything = list(session.stems.values())
        gain = shared_gain(everything)
        full = mix(everything, gain)
        partial_wave = mix([w for n, w in session.stems.items() if n != stem], gain)
        write_wav_file(out / "original.wav", full)
    else:
        full = None
        partial_wave = read_wav_file(args.input)

    result, partials, generated = insert_into_waveform(ckpt.model, ckpt.schedule, cfg, scfg, partial_wave,
                                                       instruction)
    write_wav_file(out / "partial.wav", partial_wave)
    write_wav_file(out / "generated.wav", result)
    if full is not None:
        span = (cfg.target_frames - 1) * cfg.hop
        head = Waveform(np.pad(full.samples[:span], (0, max(0, span - len(full)))), cfg.sample_rate)
        write_png(out / "triptych.png", render_triptych(mel_spectrogram(head, cfg), partials[0], generated[0]))
    else:
        write_png(out / "comparison.png", hstack([render_mel(partials[0]), render_mel(generated[0])]))
    print(f"[Sample] '{instruction.text}': wrote {out / 'generated.wav'} ({result.duration:.2f} s)")
    return 0


# =============================================================================
# baseline
# =============================================================================

def cmd_baseline(args: argparse.Namespace) -> int:
    run = _run_config(args)
    if args.method != "sdedit":
        raise DatasetError(f"unknown baseline method '{args.method}'")
    ckpt = load_checkpoint(args.checkpoint)
    if _domain(ckpt) != "spectrogram":
        raise CheckpointError("the SDEdit baseline needs a spectrogram model")
    if ckpt.metadata.get("method") != "prior":
        print(f"[Sample] note: {args.checkpoint} was not trained with --text-only")
    scfg = _sampler(run, args)
    target = ckpt.metadata.get("target") or args.stem
    triplets = select(read_manifest(args.manifest), "triplet", args.split, target)[:args.limit]
    if not triplets:
        raise DatasetError(f"no {args.split} triplets for '{target}' in {args.manifest}")

    method = f"sdedit-{scfg.steps}"
    generated: List[MelSpec] = []
    for batch in tqdm(list(_batched(triplets)), desc=method, disable=args.quiet):
        captions = [short_caption(t.instruction) for t in batch]
        generated += sample_sdedit_batch(ckpt.model, [t.partial for t in batch], captions, scfg, ckpt.schedule,
                                         args.strength)
    out = Path(args.out)
    write_generation_set(out, "spectrogram", method, _stack(generated),
                         {"target": target, "strength": args.strength, "config_hash": run.config_hash,
                          "stft": triplets[0].full.config.model_dump()},
                         target=_stack([t.full for t in triplets]), partial=_stack([t.partial for t in triplets]))
    write_png(out / "triptych.png", render_triptych(triplets[0].full, triplets[0].partial, generated[0]))
    return 0


# =============================================================================
# evaluate
# =============================================================================

def _evaluate_rolls(tensors: Dict[str, np.ndarray], meta: Dict, tolerance: int) -> Dict:
    target = Instrument.parse(meta["target"])
    spb, base = int(meta["steps_per_bar"]), int(meta["pitch_base"])
    scores, empty, densities = [], 0, []
    for data in tensors["generated"]:
        roll = PianoRoll(data.astype(np.uint8), spb, base)
        result = onset_alignment(roll, target, tolerance=tolerance)
        empty += int(result.no_onsets)
        scores.append(result.score)
        densities.append(note_density(roll, target))
    return {
        "domain": "roll",
        "method": meta.get("method", "binary"),
        "n": len(scores),
        "onset_alignment_mean": float(np.mean(scores)),
        "onset_pass_rate": float(np.mean([s >= ONSET_PASS for s in scores])),
        "no_onsets": empty,
        "density_mean": float(np.mean(densities)),
    }


def cmd_evaluate(args: argparse.Namespace) -> int:
    run = _run_config(args)
    tensors, meta = read_generation_set(args.generated)
    if meta["domain"] == "roll":
        report = _evaluate_rolls(tensors, meta, run.metrics.onset_tolerance)
        report["config_hash"] = meta.get("config_hash", run.config_hash)
        print(f"[Eval] onset alignment {report['onset_alignment_mean']:.3f}, "
              f"{report['onset_pass_rate']:.0%} of chunks >= {ONSET_PASS}")
    else:
        cfg = StftConfig(**meta["stft"])
        generated = _specs(tensors["generated"], cfg)
        if args.reference:
            ref_tensors, _ = read_generation_set(args.reference)
            targets = _specs(ref_tensors["generated"], cfg)
        else:
            targets = _specs(tensors["target"], cfg)
        emb_dir = Path(args.embedders or Path(run.run_dir) / run.metrics.embedder_dir)
        embedders = [load_embedder(emb_dir / f"{name}.stwd") for name in EMBEDDER_NAMES]
        report = evaluate_pairs(generated, targets, *embedders,
                                config_hash=meta.get("config_hash", run.config_hash),
                                method=meta.get("method", "subtractive"),
                                kld_smoothing=run.metrics.kld_smoothing).to_dict()

    base = Path(args.generated)
    path = Path(args.out) if args.out else (base if base.is_dir() else base.parent) / REPORT_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"[Eval] report written to {path}")
    return 0


# =============================================================================
# render
# =============================================================================

def cmd_render(args: argparse.Namespace) -> int:
    run = _run_config(args)
    src = Path(args.input)
    suffix = src.suffix.lower()
    stem = Instrument.parse(args.stem) if args.stem else None
    if suffix == ".wav":
        cfg = run.stft()
        wave = resample(read_wav_file(src), cfg.sample_rate)
        span = (cfg.target_frames - 1) * cfg.hop
        head = Waveform(np.pad(wave.samples[:span], (0, max(0, span - len(wave)))), cfg.sample_rate)
        img = render_mel(mel_spectrogram(head, cfg))
    elif suffix in MIDI_SUFFIXES:
        img = render_roll(to_pianoroll(parse_midi(src.read_bytes())), generated=stem)
    elif suffix == ".stwd":
        tensors, meta = tensorio.load(src)
        kind, i = meta.get("kind"), args.index
        if kind == GENERATIONS_KIND and meta["domain"] == "spectrogram":
            cfg = StftConfig(**meta["stft"])
            full, partial, gen = (MelSpec(np.clip(tensors[k][i], 0, 1), cfg) for k in ("target", "partial", "generated"))
            img = render_triptych(full, partial, gen)
        elif kind == GENERATIONS_KIND:
            roll = PianoRoll(tensors["generated"][i].astype(np.uint8), meta["steps_per_bar"], meta["pitch_base"])
            img = render_roll(roll, generated=stem or Instrument.parse(meta["target"]))
        elif kind == "triplet":
            cfg = StftConfig(**meta["stft"])
            img = hstack([render_mel(MelSpec(tensors[k], cfg)) for k in ("full", "partial")])
        elif kind == "roll":
            img = render_roll(PianoRoll(tensors["roll"].astype(np.uint8), meta["steps_per_bar"], meta["pitch_base"]),
                              generated=stem)
        else:
            raise StemDiffError(f"{src} is a '{kind}' file; nothing to render")
    else:
        raise StemDiffError(f"cannot render '{suffix}' files (expected .wav, .mid or .stwd)")
    path = write_png(args.out, img)
    print(f"[Render] wrote {path} ({img.width}x{img.height})")
    return 0


# =============================================================================
# Entry point
# =============================================================================

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML run config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--quiet", action="store_true", help="hide progress bars")


def _sampling(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, help="denoising steps (default 20)")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stemctl", description="Stem insertion with conditional diffusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="synthesize the toy corpus and write its manifest")
    _common(p)
    p.add_argument("--out", help="corpus directory")
    p.add_argument("--sessions", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--style", action="append", help="restrict to a style (repeatable)")
    p.add_argument("--bars", type=int)
    p.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    p.set_defaults(func=cmd_make_corpus)

    p = sub.add_parser("train", help="train a denoiser for one target stem")
    _common(p)
    p.add_argument("--manifest", help="corpus directory")
    p.add_argument("--target", default="drums", choices=("drums", "bass", "guitar"))
    p.add_argument("--kind", default="spectrogram", choices=("spectrogram", "roll"))
    p.add_argument("--steps", type=int, help="train until this optimizer step")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--run-dir")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--text-only", action="store_true", help="train the text-to-spectrogram prior")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-embedder", help="train the FD and FAD toy embedders")
    _common(p)
    p.add_argument("--manifest", help="corpus directory")
    p.add_argument("--out", help="directory for fd.stwd and fad.stwd")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train_embedder)

    p = sub.add_parser("generate", help="insert a stem into a wav, midi, separated session or manifest split")
    _common(p)
    _sampling(p)
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help=".wav partial mix or .mid file")
    src.add_argument("--stems-dir", help="directory of <stem>.wav files; the named stem is re-generated")
    src.add_argument("--manifest", help="corpus directory; generates for a whole split")
    p.add_argument("--stem", help="stem to insert (defaults to the checkpoint's target)")
    p.add_argument("--instruction")
    p.add_argument("--mode", choices=("ddim", "ddpm"))
    p.add_argument("--guidance-text", type=float)
    p.add_argument("--guidance-image", type=float)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--limit", type=int)
    p.add_argument("--out", default="outputs")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("baseline", help="SDEdit baseline over a manifest split")
    _common(p)
    _sampling(p)
    p.add_argument("--method", default="sdedit")
    p.add_argument("--checkpoint", required=True, help="text-only prior checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--stem", default="drums")
    p.add_argument("--strength", type=float, default=0.5)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--limit", type=int)
    p.add_argument("--out", default="outputs/sdedit")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="FD / FAD / KLD / ISc (or onset alignment for rolls)")
    _common(p)
    p.add_argument("--generated", required=True, help="generation set directory")
    p.add_argument("--reference", help="compare against this set's generations instead of its own targets")
    p.add_argument("--embedders", help="directory holding fd.stwd and fad.stwd")
    p.add_argument("--out", help="report path (default <generated>/report.json)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="PNG of a wav, midi, tensor file or generation set")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--stem", help="outline this instrument in piano-roll renders")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except (StemDiffError, ValueError, OSError) as exc:
        message = " ".join(str(exc).split())
        print(json.dumps({"error": type(exc).__name__, "message": message}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
