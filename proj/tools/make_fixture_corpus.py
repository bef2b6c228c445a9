#!/usr/bin/env python3
"""Generate a synthetic per-format source corpus.

Layout: <out>/<label>/<files>, labels enc (plaintext to be encrypted by
`encod corpus build`), zip, gzip, png, jpeg, mp3, pdf. No rar encoder is
available as a library, so rar is not produced.

Output is a pure function of --seed and --scale. A stamp file records the
parameters; an existing matching stamp makes the run a no-op.
"""

import argparse
import gzip
import io
import json
import os
import random
import shutil
import sys
import time
import zipfile

import numpy as np

GENERATOR_VERSION = 4
TEXT_EXTS = (".txt", ".rst", ".md", ".html", ".py", ".c", ".h", ".pl", ".pm")
TEXT_ROOTS = ("/usr/share", "/usr/lib", "/usr/local/lib", "/usr/include")
MB = 1 << 20

# Bytes per label at scale 1.0, and minimum file count.
TARGET_BYTES = {
    "enc": 470 * MB,
    "zip": 470 * MB,
    "gzip": 250 * MB,
    "png": 250 * MB,
    "jpeg": 250 * MB,
    "mp3": 250 * MB,
    "pdf": 250 * MB,
}
MIN_FILES = 1000


def log(msg):
    print(f"[fixture] {msg}", file=sys.stderr, flush=True)


# --- text ------------------------------------------------------------------


def load_paragraphs(limit_per_file=256 * 1024):
    files = []
    for root in TEXT_ROOTS:
        for dirpath, dirnames, filenames in os.walk(root):
            dirnames.sort()
            for name in sorted(filenames):
                if name.endswith(TEXT_EXTS):
                    files.append(os.path.join(dirpath, name))
    paragraphs = []
    for path in files:
        try:
            with open(path, "rb") as f:
                data = f.read(limit_per_file)
        except OSError:
            continue
        if b"\0" in data:
            continue
        for p in data.split(b"\n\n"):
            if 40 <= len(p) <= 16384:
                paragraphs.append(p)
    if not paragraphs:
        raise SystemExit("no text sources found")
    return paragraphs


def make_document(rng, paragraphs, size):
    parts, total = [], 0
    while total < size:
        p = paragraphs[rng.randrange(len(paragraphs))]
        parts.append(p)
        total += len(p) + 2
    return b"\n\n".join(parts)[:size]


def doc_size(rng, mean):
    return max(8192, int(rng.lognormvariate(0, 0.6) * mean))


def gen_enc(out, rng, target, paragraphs):
    i = total = 0
    mean = max(target // (MIN_FILES * 2), 64 * 1024)
    while total < target or i < MIN_FILES:
        data = make_document(rng, paragraphs, doc_size(rng, mean))
        with open(os.path.join(out, f"doc{i:05d}.txt"), "wb") as f:
            f.write(data)
        total += len(data)
        i += 1
    return i, total


def gen_zip(out, rng, target, paragraphs):
    i = total = 0
    mean = max(target // (MIN_FILES * 2), 32 * 1024) * 3
    while total < target or i < MIN_FILES:
        path = os.path.join(out, f"archive{i:05d}.zip")
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as z:
            for k in range(rng.randint(1, 6)):
                info = zipfile.ZipInfo(f"docs/part{k}.txt", date_time=(2020, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                z.writestr(info, make_document(rng, paragraphs, doc_size(rng, mean // 3)))
        total += os.path.getsize(path)
        i += 1
    return i, total


def gen_gzip(out, rng, target, paragraphs):
    i = total = 0
    mean = max(target // (MIN_FILES * 2), 32 * 1024) * 3
    while total < target or i < MIN_FILES:
        data = gzip.compress(make_document(rng, paragraphs, doc_size(rng, mean)), mtime=0)
        with open(os.path.join(out, f"doc{i:05d}.txt.gz"), "wb") as f:
            f.write(data)
        total += len(data)
        i += 1
    return i, total


# --- images ------------------------------------------------------------------


def fractal_noise(nrng, h, w, beta):
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.sqrt(fx * fx + fy * fy)
    f[0, 0] = 1.0
    spectrum = (nrng.standard_normal((h, w // 2 + 1)) + 1j * nrng.standard_normal((h, w // 2 + 1))) / f**beta
    img = np.fft.irfft2(spectrum, s=(h, w))
    img -= img.min()
    img /= max(img.max(), 1e-12)
    return img


def photo(nrng, h, w):
    channels = []
    base = fractal_noise(nrng, h, w, nrng.uniform(1.0, 1.6))
    for _ in range(3):
        c = 0.75 * base + 0.25 * fractal_noise(nrng, h, w, nrng.uniform(0.9, 1.8))
        channels.append(c)
    img = np.stack(channels, axis=-1)
    img = img * nrng.uniform(0.7, 1.0) + nrng.uniform(0, 0.2)
    img += nrng.normal(0, nrng.uniform(0.005, 0.03), img.shape)
    return (np.clip(img, 0, 1) * 255).astype(np.uint8)


def diagram(rng, w, h):
    # Flat-colour artwork: shapes, strokes and labels on a plain or graded background.
    from PIL import Image, ImageDraw

    if rng.random() < 0.3:
        a = np.array([rng.randint(0, 255) for _ in range(3)], dtype=float)
        b = np.array([rng.randint(0, 255) for _ in range(3)], dtype=float)
        ramp = np.linspace(0, 1, h)[:, None, None]
        im = Image.fromarray(np.broadcast_to(a + (b - a) * ramp, (h, w, 3)).astype(np.uint8), "RGB")
    else:
        im = Image.new("RGB", (w, h), tuple(rng.randint(200, 255) for _ in range(3)))
    d = ImageDraw.Draw(im)
    for _ in range(rng.randint(3, 25)):
        x0, y0 = rng.randrange(w), rng.randrange(h)
        x1, y1 = x0 + rng.randint(20, w // 2), y0 + rng.randint(20, h // 2)
        col = tuple(rng.randint(0, 255) for _ in range(3))
        k = rng.random()
        if k < 0.4:
            d.rectangle([x0, y0, x1, y1], fill=col)
        elif k < 0.6:
            d.ellipse([x0, y0, x1, y1], fill=col, outline=(0, 0, 0))
        elif k < 0.8:
            d.line([x0, y0, x1, y1], fill=col, width=rng.randint(1, 6))
        else:
            for t in range(rng.randint(2, 15)):
                d.text((x0, y0 + 12 * t), "label %d value %.3f" % (rng.randint(0, 999), rng.random()), fill=(0, 0, 0))
    return im


def gen_png(out, rng, target):
    from PIL import Image

    # Mix of deflated diagrams, deflated photos and uncompressed (stored) images.
    nrng = np.random.default_rng(rng.getrandbits(64))
    i = total = 0
    while total < target or i < MIN_FILES:
        kind = rng.random()
        if kind < 0.25:
            w, h = rng.randint(500, 1100), rng.randint(400, 900)
            im = Image.fromarray(photo(nrng, h, w), "RGB") if rng.random() < 0.4 else diagram(rng, w, h)
            level = 0
        elif kind < 0.33:
            w, h = rng.randint(500, 1100), rng.randint(400, 900)
            im = Image.fromarray(photo(nrng, h, w), "RGB")
            level = rng.choice((1, 6, 9))
        else:
            im = diagram(rng, rng.randint(1200, 3000), rng.randint(900, 2400))
            level = rng.choice((1, 6, 9))
        if rng.random() < 0.2:
            im = im.convert("RGBA")
        path = os.path.join(out, f"img{i:05d}.png")
        im.save(path, format="PNG", compress_level=level)
        total += os.path.getsize(path)
        i += 1
    return i, total


def gen_jpeg(out, rng, target, prefix="img", min_files=None, quality=(70, 95), dims=((640, 1600), (480, 1200))):
    min_files = MIN_FILES if min_files is None else min_files
    from PIL import Image

    nrng = np.random.default_rng(rng.getrandbits(64))
    i = total = 0
    paths = []
    while total < target or i < min_files:
        w, h = rng.randint(*dims[0]), rng.randint(*dims[1])
        im = Image.fromarray(photo(nrng, h, w), "RGB")
        path = os.path.join(out, f"{prefix}{i:05d}.jpg")
        im.save(path, format="JPEG", quality=rng.randint(*quality), optimize=rng.random() < 0.5)
        total += os.path.getsize(path)
        paths.append(path)
        i += 1
    return i, total, paths


# --- audio -------------------------------------------------------------------


def synth_track(nrng, rng, seconds, rate):
    n = int(seconds * rate)
    t = np.arange(n) / rate
    signal = np.zeros(n)
    beat = rng.uniform(0.3, 0.8)
    for _ in range(rng.randint(2, 6)):
        f0 = 55.0 * 2 ** (rng.randint(0, 48) / 12)
        env = 0.5 + 0.5 * np.sin(2 * np.pi * t / rng.uniform(0.5, 4.0) + rng.random() * 6)
        voice = sum(np.sin(2 * np.pi * f0 * k * t + rng.random() * 6) / k for k in range(1, rng.randint(2, 8)))
        signal += env * voice
    # Percussive noise bursts.
    hits = (np.mod(t, beat) < 0.03).astype(float)
    signal += hits * nrng.standard_normal(n) * rng.uniform(0.2, 1.5)
    signal += nrng.standard_normal(n) * rng.uniform(0.005, 0.05)
    signal /= max(np.abs(signal).max(), 1e-9)
    if rng.random() < 0.1:  # silent intro
        signal[: int(rate * rng.uniform(0.5, 3))] = 0
    left = signal
    right = np.roll(signal, rng.randint(0, 400)) * rng.uniform(0.7, 1.0)
    pcm = np.stack([left, right], axis=1) * 0.8 * 32767
    return pcm.astype("<i2")


def gen_mp3(out, rng, target):
    import lameenc

    nrng = np.random.default_rng(rng.getrandbits(64))
    rate = 44100
    i = total = 0
    while total < target or i < MIN_FILES:
        bitrate = rng.choice((128, 160, 192, 256, 320))
        seconds = max(3.0, rng.lognormvariate(0, 0.5) * target * 8 / (bitrate * 1000 * MIN_FILES * 1.2))
        enc = lameenc.Encoder()
        enc.set_bit_rate(bitrate)
        enc.set_in_sample_rate(rate)
        enc.set_channels(2)
        enc.set_quality(7)
        data = enc.encode(synth_track(nrng, rng, seconds, rate).tobytes()) + enc.flush()
        with open(os.path.join(out, f"track{i:05d}.mp3"), "wb") as f:
            f.write(data)
        total += len(data)
        i += 1
    return i, total


# --- pdf ---------------------------------------------------------------------


def gen_pdf(out, rng, target, paragraphs, image_dir):
    from reportlab import rl_config
    from reportlab.lib.pagesizes import A4
    from reportlab.pdfgen import canvas

    rl_config.useA85 = 0

    os.makedirs(image_dir, exist_ok=True)
    # A private pool of embedded photos, distinct from the jpeg label.
    _, _, pool = gen_jpeg(image_dir, rng, target // 20, prefix="fig", min_files=min(200, MIN_FILES), quality=(60, 90),
                          dims=((320, 800), (240, 600)))
    i = total = 0
    width, height = A4
    while total < target or i < MIN_FILES:
        path = os.path.join(out, f"paper{i:05d}.pdf")
        c = canvas.Canvas(path, pagesize=A4, pageCompression=1, invariant=1)
        for _ in range(rng.randint(1, 4)):
            text = c.beginText(50, height - 60)
            text.setFont(rng.choice(("Helvetica", "Times-Roman", "Courier")), 9)
            for line in make_document(rng, paragraphs, rng.randint(1500, 5000)).decode("latin-1").splitlines()[:60]:
                text.textLine(line[:100])
            c.drawText(text)
            for _ in range(rng.randint(0, 2)):
                c.drawImage(pool[rng.randrange(len(pool))], rng.randint(40, 300), rng.randint(40, 400),
                            width=rng.randint(120, 260), height=rng.randint(90, 200))
            c.showPage()
        c.save()
        total += os.path.getsize(path)
        i += 1
    return i, total


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--scale", type=float, default=1.0, help="fraction of the default byte targets")
    ap.add_argument("--labels", default="enc,zip,gzip,png,jpeg,mp3,pdf")
    ap.add_argument("--min-files", type=int, default=MIN_FILES)
    args = ap.parse_args()
    globals()["MIN_FILES"] = args.min_files

    labels = [l for l in args.labels.split(",") if l]
    params = {"version": GENERATOR_VERSION, "seed": args.seed, "scale": args.scale, "labels": labels,
              "min_files": args.min_files}
    stamp = os.path.join(args.out, "stamp.json")
    if os.path.exists(stamp):
        with open(stamp) as f:
            if json.load(f).get("params") == params:
                log(f"{args.out} is up to date")
                return
    os.makedirs(args.out, exist_ok=True)
    if os.path.exists(stamp):
        os.remove(stamp)

    paragraphs = None
    summary = {}
    for k, label in enumerate(labels):
        rng = random.Random(args.seed * 1000 + k)
        target = int(TARGET_BYTES[label] * args.scale)
        d = os.path.join(args.out, label)
        shutil.rmtree(d, ignore_errors=True)
        os.makedirs(d)
        start = time.time()
        if label in ("enc", "zip", "gzip", "pdf") and paragraphs is None:
            paragraphs = load_paragraphs()
            log(f"{len(paragraphs)} text paragraphs")
        if label == "enc":
            n, total = gen_enc(d, rng, target, paragraphs)
        elif label == "zip":
            n, total = gen_zip(d, rng, target, paragraphs)
        elif label == "gzip":
            n, total = gen_gzip(d, rng, target, paragraphs)
        elif label == "png":
            n, total = gen_png(d, rng, target)
        elif label == "jpeg":
            n, total, _ = gen_jpeg(d, rng, target)
        elif label == "mp3":
            n, total = gen_mp3(d, rng, target)
        elif label == "pdf":
            scratch = os.path.join(args.out, "_pdf_images")
            n, total = gen_pdf(d, rng, target, paragraphs, scratch)
            shutil.rmtree(scratch, ignore_errors=True)
        else:
            raise SystemExit(f"unknown label {label}")
        summary[label] = {"files": n, "bytes": total}
        log(f"{label}: {n} files, {total / MB:.1f} MiB in {time.time() - start:.0f}s")

    with open(stamp, "w") as f:
        json.dump({"params": params, "labels": summary}, f, indent=2)


if __name__ == "__main__":
    main()
