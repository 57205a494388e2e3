"""Umbrella command line: synthesis, tokenization, training, serving.

Every stage of the captioning pipeline is reachable from one entry
point::

    haptix synth --spec specs.json --seed 0 --out waves/
    haptix vibrate-gen --seed 0 --out collection/
    haptix tokenize --tokenizer freq --in sig.wav
    haptix rvq-fit --corpus collection/ --stages 2 --codebook 1024 --out codec.npz
    haptix prompt --signal-tokens toks.txt --category sensory --caption "a soft buzz"
    haptix train-sft --data captions.jsonl --tokenizer freq --out sft.npz
    haptix generate --ckpt sft.npz --in sig.wav --category emotional
    haptix rate serve --campaign campaign.jsonl --signals collection/signals
    haptix pairs --ratings ratings.jsonl --out pairs.jsonl
    haptix train-dpo --ckpt sft.npz --pairs pairs.jsonl --signals collection/
    haptix eval --pred preds.jsonl --metrics bleu1,bleu4,rougeL,meteor
    haptix split --data captions.jsonl --ratios 0.8,0.1,0.1 --out split.jsonl

Commands that involve randomness honor ``--seed``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import click
import numpy as np

from . import corpus as corpus_mod
from .dpo import build_pairs, train_dpo
from .freq_tokenizer import FrequencyTokenizer
from .metrics import METRIC_FUNCS, EvalSample, evaluate_corpus
from .model import (
    ModelConfig,
    generate as model_generate,
    init_model,
    load_checkpoint_extra,
    load_model,
    save_model,
    train_sft,
)
from .prompts import CATEGORIES, EOS, TEXT_BASE, Vocabulary, assemble
from .rvq import ResidualVectorQuantizer
from .waveform import SynthSpec, read_wav, synthesize, write_wav


@click.group()
def main():
    """Desk-scale haptic captioning pipeline."""


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _read_kv_config(path: str | None) -> dict:
    """Flat key-value text config: one ``key value`` (or ``key=value``)
    per line, ``#`` comments allowed; numbers parsed as int then float."""
    if path is None:
        return {}
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = (
                line.partition("=") if "=" in line else line.partition(" ")
            )
            key, value = key.strip(), value.strip()
            if not key or not value:
                raise click.ClickException(f"bad config line: {raw.rstrip()}")
            for cast in (int, float):
                try:
                    out[key] = cast(value)
                    break
                except ValueError:
                    continue
            else:
                out[key] = value
    return out


def _tokenizer_from(kind: str, config: str | None, codec: str | None):
    """Returns (encode_fn, block_name, block_size) for a tokenizer choice."""
    if kind == "freq":
        tok = FrequencyTokenizer(**_read_kv_config(config)).fit()
        return tok.encode, "freq", tok.vocab_size_
    if kind == "rvq":
        if codec is None:
            raise click.ClickException("--codec is required for the rvq tokenizer")
        cod = ResidualVectorQuantizer.load(codec)
        return cod.encode, "rvq", cod.codebook_size
    raise click.ClickException(f"unknown tokenizer {kind!r}")


def _build_vocab(block_name: str, block_size: int) -> Vocabulary:
    vocab = Vocabulary()
    vocab.register_block(block_name, block_size)
    return vocab


def _to_global(vocab: Vocabulary, block_name: str, local_ids) -> list[int]:
    return [vocab.to_global(block_name, int(t)) for t in local_ids]


def _caption_text(ids) -> str:
    """Decode generated ids to caption text (bytes up to the first EOS)."""
    data = bytearray()
    for i in ids:
        if i == EOS:
            break
        if 0 <= i < 256:
            data.append(i)
    return data.decode("utf-8", errors="replace").strip()


def _find_wav(root: str, signal_id: str) -> str:
    for candidate in (
        os.path.join(root, "signals", f"{signal_id}.wav"),
        os.path.join(root, f"{signal_id}.wav"),
    ):
        if os.path.isfile(candidate):
            return candidate
    raise click.ClickException(f"no WAV for signal {signal_id!r} under {root}")


def _text_allowed_ids() -> list[int]:
    return list(range(256)) + [EOS]


def _load_rows(path: str) -> list[dict]:
    rows = corpus_mod.load_jsonl(path)
    if not rows:
        raise click.ClickException(f"{path} has no records")
    return rows


def _prompt_samples(rows, encode, vocab, block_name, data_dir, stride):
    """Tokenize each row's WAV and assemble its training sequence."""
    cache: dict[str, list[int]] = {}
    samples = []
    for row in rows:
        wav_rel = row.get("wav", f"signals/{row['signal_id']}.wav")
        wav_path = os.path.join(data_dir, wav_rel)
        if wav_path not in cache:
            cache[wav_path] = _to_global(vocab, block_name,
                                         encode(read_wav(wav_path)))
        ids, span = assemble(
            vocab, cache[wav_path], row["category"], row["caption"],
            haptic_stride=stride,
        )
        samples.append((ids, span))
    return samples


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True),
              help="JSON file: one synthesis spec object or a list of them.")
@click.option("--seed", default=0, show_default=True,
              help="Noise seed base for specs that do not set one.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output directory for WAVs and manifest.jsonl.")
def synth(spec_path, seed, out_dir):
    """Render synthesis specs to WAV files plus a manifest."""
    with open(spec_path, encoding="utf-8") as fh:
        raw = json.load(fh)
    specs = raw if isinstance(raw, list) else [raw]
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    for i, entry in enumerate(specs):
        entry = dict(entry)
        name = entry.pop("name", f"synth-{i:03d}")
        if "envelope" in entry:
            entry["envelope"] = tuple(tuple(p) for p in entry["envelope"])
        entry.setdefault("noise_seed", seed + i)
        w = synthesize(SynthSpec(**entry))
        wav_rel = f"{name}.wav"
        write_wav(w, os.path.join(out_dir, wav_rel))
        manifest.append({
            "signal_id": name,
            "wav": wav_rel,
            "duration_s": round(len(w.samples) / w.sample_rate, 6),
            "sample_rate": w.sample_rate,
            "params": {k: (list(map(list, v)) if k == "envelope" else v)
                       for k, v in entry.items()},
        })
    corpus_mod.save_jsonl(manifest, os.path.join(out_dir, "manifest.jsonl"))
    click.echo(f"wrote {len(specs)} signal(s) to {out_dir}")


@main.command("vibrate-gen")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def vibrate_gen(seed, out_dir):
    """Generate the full 704-signal collection with captions and campaign."""
    records = corpus_mod.build_collection(seed=seed)
    manifest = corpus_mod.write_collection(records, out_dir)
    rows = corpus_mod.build_caption_dataset(records, seed=seed)
    corpus_mod.save_jsonl(rows, os.path.join(out_dir, "captions.jsonl"))
    cards = corpus_mod.build_campaign(records)
    corpus_mod.save_jsonl(cards, os.path.join(out_dir, "campaign.jsonl"))
    counts = {s: sum(r.source == s for r in records) for s in corpus_mod.SOURCES}
    click.echo(f"wrote {len(records)} signals ({json.dumps(counts)})")
    click.echo(f"manifest: {manifest}")
    click.echo(f"captions: {len(rows)} rows, campaign: {len(cards)} cards")


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------

@main.command()
@click.option("--tokenizer", "kind", type=click.Choice(["freq", "rvq"]),
              default="freq", show_default=True)
@click.option("--in", "wav_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="Flat key-value text config for the frequency tokenizer.")
@click.option("--codec", "codec_path", type=click.Path(exists=True),
              help="Fitted RVQ codec file (required for --tokenizer rvq).")
@click.option("--ids", "as_ids", is_flag=True, help="Print integer ids.")
def tokenize(kind, wav_path, config_path, codec_path, as_ids):
    """Tokenize one WAV; prints symbols (or ids with --ids)."""
    w = read_wav(wav_path)
    if kind == "freq":
        tok = FrequencyTokenizer(**_read_kv_config(config_path)).fit()
        ids = tok.encode(w)
        out = ids if as_ids else tok.ids_to_strings(ids)
    else:
        encode, _, _ = _tokenizer_from("rvq", None, codec_path)
        out = encode(w)
    click.echo(" ".join(str(t) for t in out))


@main.command("rvq-fit")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--stages", default=1, show_default=True)
@click.option("--codebook", default=1024, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--frame-len", default=58, show_default=True)
@click.option("--hop-len", default=58, show_default=True)
@click.option("--num-frames", default=1379, show_default=True)
@click.option("--iters", default=25, show_default=True)
@click.option("--max-fit-frames", default=20000, show_default=True)
def rvq_fit(corpus_dir, stages, codebook, seed, out_path, frame_len, hop_len,
            num_frames, iters, max_fit_frames):
    """Fit an RVQ codec on every WAV under a directory."""
    wavs = []
    for root, _, files in os.walk(corpus_dir):
        for name in sorted(files):
            if name.lower().endswith(".wav"):
                wavs.append(read_wav(os.path.join(root, name)))
    if not wavs:
        raise click.ClickException(f"no WAV files under {corpus_dir}")
    codec = ResidualVectorQuantizer(
        frame_len=frame_len, hop_len=hop_len, num_frames=num_frames,
        num_stages=stages, codebook_size=codebook, kmeans_iters=iters,
        max_fit_frames=max_fit_frames, random_state=seed,
    ).fit(wavs)
    codec.save(out_path)
    err = float(np.mean([codec.reconstruction_error(w) for w in wavs[:16]]))
    click.echo(f"fitted {stages} stage(s) on {len(wavs)} signals; "
               f"codec -> {out_path} (sample reconstruction mse {err:.6f})")


# ---------------------------------------------------------------------------
# prompting and training
# ---------------------------------------------------------------------------

@main.command("prompt")
@click.option("--signal-tokens", "tokens_path", required=True,
              type=click.Path(exists=True),
              help="Text file of whitespace-separated local haptic token ids.")
@click.option("--category", required=True, type=click.Choice(list(CATEGORIES)))
@click.option("--caption", default=None)
@click.option("--tokenizer", "kind", type=click.Choice(["freq", "rvq"]),
              default="freq", show_default=True,
              help="Which haptic block the ids belong to (freq=278, rvq=1024).")
@click.option("--stride", default=1, show_default=True)
def prompt_cmd(tokens_path, category, caption, kind, stride):
    """Assemble a prompt from tokenized signal ids; prints ids and text."""
    with open(tokens_path, encoding="utf-8") as fh:
        local_ids = [int(t) for t in fh.read().split()]
    block_size = 278 if kind == "freq" else 1024
    vocab = _build_vocab(kind, block_size)
    ids, span = assemble(vocab, _to_global(vocab, kind, local_ids), category,
                         caption, haptic_stride=stride)
    click.echo(" ".join(str(i) for i in ids))
    click.echo(vocab.decode_text(ids))
    if span is not None:
        click.echo(f"caption span: [{span[0]}, {span[1]})")


@main.command("train-sft")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True),
              help="Caption dataset JSONL (signal_id, wav, category, caption).")
@click.option("--tokenizer", "kind", type=click.Choice(["freq", "rvq"]),
              default="freq", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--codec", "codec_path", type=click.Path(exists=True))
@click.option("--epochs", default=10, show_default=True)
@click.option("--lr", default=3e-4, show_default=True)
@click.option("--batch", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--stride", default=1, show_default=True)
@click.option("--d-model", default=64, show_default=True)
@click.option("--layers", default=2, show_default=True)
@click.option("--heads", default=4, show_default=True)
@click.option("--rank", default=4, show_default=True)
@click.option("--lora-scale", default=1.0, show_default=True,
              help="Adapter-product multiplier; larger speeds adapter-only "
              "training (16-64 with --rank 16 trains well at the default lr).")
@click.option("--head-gain", default=1.0, show_default=True,
              help="Output-head init scale; the head is frozen, so >1 "
              "strengthens the training signal reaching the adapters.")
@click.option("--momentum", default=0.9, show_default=True)
@click.option("--max-seq", default=1600, show_default=True)
@click.option("--split", "split_name", default="train", show_default=True,
              help="Train on rows of this split ('all' uses every row).")
@click.option("--out", "out_path", required=True, type=click.Path())
def train_sft_cmd(data_path, kind, config_path, codec_path, epochs, lr, batch,
                  seed, stride, d_model, layers, heads, rank, lora_scale,
                  head_gain, momentum, max_seq, split_name, out_path):
    """Supervised fine-tuning over caption prompts (adapters + haptic rows)."""
    rows = _load_rows(data_path)
    if split_name != "all":
        rows = [r for r in rows if r.get("split", split_name) == split_name]
    if not rows:
        raise click.ClickException(f"no rows in split {split_name!r}")
    encode, block_name, block_size = _tokenizer_from(kind, config_path, codec_path)
    vocab = _build_vocab(block_name, block_size)
    samples = _prompt_samples(rows, encode, vocab, block_name,
                              os.path.dirname(os.path.abspath(data_path)), stride)
    longest = max(len(ids) for ids, _ in samples)
    if longest > max_seq:
        raise click.ClickException(
            f"longest sequence ({longest}) exceeds --max-seq {max_seq}")
    config = ModelConfig(
        vocab_size=vocab.size, d_model=d_model, n_layers=layers, n_heads=heads,
        d_ff=4 * d_model, max_seq_len=max_seq, lora_rank=rank,
        lora_scale=lora_scale, head_gain=head_gain,
        haptic_start=TEXT_BASE, haptic_end=vocab.size,
    )
    model = init_model(config, seed=seed)
    model, history = train_sft(
        model, samples, epochs=epochs, batch_size=batch, lr=lr,
        momentum=momentum, seed=seed,
        progress=lambda e, loss: click.echo(f"epoch {e}: loss {loss:.4f}"),
    )
    save_model(model, out_path, extra={"tokenizer": kind, "stride": stride})
    click.echo(f"saved checkpoint -> {out_path} "
               f"(final loss {history[-1]:.4f}, {len(samples)} samples)")


@main.command("generate")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--in", "wav_path", required=True, type=click.Path(exists=True))
@click.option("--category", required=True, type=click.Choice(list(CATEGORIES)))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--codec", "codec_path", type=click.Path(exists=True))
@click.option("--max-new", default=64, show_default=True)
@click.option("--temperature", default=0.0, show_default=True,
              help="0 decodes greedily; >0 samples.")
@click.option("--seed", default=0, show_default=True)
def generate_cmd(ckpt_path, wav_path, category, config_path, codec_path,
                 max_new, temperature, seed):
    """Caption one WAV with a trained checkpoint."""
    model = load_model(ckpt_path)
    extra = load_checkpoint_extra(ckpt_path)
    kind = extra.get("tokenizer", "freq")
    stride = int(extra.get("stride", 1))
    encode, block_name, block_size = _tokenizer_from(kind, config_path, codec_path)
    vocab = _build_vocab(block_name, block_size)
    if vocab.size != model.config.vocab_size:
        raise click.ClickException(
            f"checkpoint vocab {model.config.vocab_size} != tokenizer vocab "
            f"{vocab.size}; pass the tokenizer the model was trained with")
    haptic = _to_global(vocab, block_name, encode(read_wav(wav_path)))
    ids, _ = assemble(vocab, haptic, category, None, haptic_stride=stride)
    out = model_generate(
        model, ids, max_new_tokens=max_new, temperature=temperature,
        seed=seed, stop_id=EOS, allowed_ids=_text_allowed_ids(),
    )
    click.echo(_caption_text(out))


@main.command("pairs")
@click.option("--ratings", "ratings_path", required=True,
              type=click.Path(exists=True))
@click.option("--cross-variant", is_flag=True,
              help="Let captions of different model variants compete.")
@click.option("--out", "out_path", required=True, type=click.Path())
def pairs_cmd(ratings_path, cross_variant, out_path):
    """Build preference pairs from rating records (3.5 threshold)."""
    records = _load_rows(ratings_path)
    pair_list = build_pairs(records, cross_variant=cross_variant)
    corpus_mod.save_jsonl([asdict(p) for p in pair_list], out_path)
    click.echo(f"{len(pair_list)} pair(s) -> {out_path}")


@main.command("train-dpo")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True),
              help="SFT checkpoint to start from (also the frozen reference).")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--signals", "signals_dir", required=True,
              type=click.Path(exists=True),
              help="Directory holding <signal_id>.wav (or signals/ under it).")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--codec", "codec_path", type=click.Path(exists=True))
@click.option("--beta", default=0.1, show_default=True)
@click.option("--epochs", default=3, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--batch", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def train_dpo_cmd(ckpt_path, pairs_path, signals_dir, config_path, codec_path,
                  beta, epochs, lr, batch, seed, out_path):
    """Preference optimization over chosen/rejected caption pairs."""
    policy = load_model(ckpt_path)
    reference = load_model(ckpt_path)
    extra = load_checkpoint_extra(ckpt_path)
    kind = extra.get("tokenizer", "freq")
    stride = int(extra.get("stride", 1))
    encode, block_name, block_size = _tokenizer_from(kind, config_path, codec_path)
    vocab = _build_vocab(block_name, block_size)
    cache: dict[str, list[int]] = {}
    sequences = []
    for row in _load_rows(pairs_path):
        sid = row["signal_id"]
        if sid not in cache:
            cache[sid] = _to_global(
                vocab, block_name, encode(read_wav(_find_wav(signals_dir, sid))))
        ids_c, span_c = assemble(vocab, cache[sid], row["category"],
                                 row["chosen"], haptic_stride=stride)
        ids_r, span_r = assemble(vocab, cache[sid], row["category"],
                                 row["rejected"], haptic_stride=stride)
        sequences.append((ids_c, span_c, ids_r, span_r))
    policy, history = train_dpo(
        policy, reference, sequences, epochs=epochs, batch_size=batch,
        lr=lr, beta=beta, seed=seed,
    )
    save_model(policy, out_path, extra=extra)
    last = history[-1]
    click.echo(f"saved checkpoint -> {out_path} "
               f"(loss {last['loss']:.4f}, margin {last['margin']:.4f})")


# ---------------------------------------------------------------------------
# evaluation, splits, serving
# ---------------------------------------------------------------------------

@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True),
              help="JSONL rows: signal_id, category, candidate, references[].")
@click.option("--metrics", "metric_names", default="bleu1,bleu4,rougeL,meteor",
              show_default=True)
@click.option("--by-category", is_flag=True)
def eval_cmd(pred_path, metric_names, by_category):
    """Score candidate captions against references (x100, mean +/- std)."""
    names = [m.strip() for m in metric_names.split(",") if m.strip()]
    unknown = [m for m in names if m not in METRIC_FUNCS]
    if unknown:
        raise click.ClickException(
            f"unknown metric(s) {unknown}; choose from {sorted(METRIC_FUNCS)}")
    samples = []
    for row in _load_rows(pred_path):
        refs = row.get("references", row.get("refs"))
        if refs is None:
            raise click.ClickException("rows need 'references' (or 'refs')")
        samples.append(EvalSample(
            signal_id=str(row.get("signal_id", len(samples))),
            category=str(row.get("category", "all")),
            candidate=str(row["candidate"]),
            references=tuple(str(r) for r in refs),
        ))
    report = evaluate_corpus(samples, names)
    click.echo(report.format_table(by_category=by_category))


@main.command("split")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--ratios", default="0.8,0.1,0.1", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def split_cmd(data_path, ratios, seed, out_path):
    """(Re)assign train/valid/test splits at the signal level."""
    parts = tuple(float(r) for r in ratios.split(","))
    rows = corpus_mod.split_dataset(_load_rows(data_path), parts, seed=seed)
    corpus_mod.save_jsonl(rows, out_path)
    counts = {s: sum(r["split"] == s for r in rows) for s in corpus_mod.SPLITS}
    click.echo(f"{json.dumps(counts)} -> {out_path}")


@main.group()
def rate():
    """Rating-collection service."""


@rate.command("serve")
@click.option("--campaign", "campaign_path", required=True,
              type=click.Path(exists=True))
@click.option("--signals", "signals_dir", required=True,
              type=click.Path(exists=True))
@click.option("--log", "log_path", default="ratings.jsonl", show_default=True)
@click.option("--static", "static_dir", type=click.Path(exists=True),
              help="Directory of UI assets to serve at /.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True)
@click.option("--session-signals", default=32, show_default=True)
@click.option("--seed", default=0, show_default=True)
def rate_serve(campaign_path, signals_dir, log_path, static_dir, host, port,
               session_signals, seed):
    """Serve the rating API (and UI assets) over HTTP."""
    from .service import RatingService, RatingStore, serve

    cards = _load_rows(campaign_path)
    if os.path.isdir(os.path.join(signals_dir, "signals")):
        signals_dir = os.path.join(signals_dir, "signals")
    service = RatingService(
        cards, RatingStore(log_path), signal_dir=signals_dir,
        static_dir=static_dir, signals_per_session=session_signals, seed=seed,
    )
    httpd = serve(service, host, port)
    click.echo(f"serving {len(cards)} caption cards on http://{host}:{port}")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        click.echo("stopped")


if __name__ == "__main__":
    main()
