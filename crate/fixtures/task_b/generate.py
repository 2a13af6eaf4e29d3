"""Regenerates the task B fixture: 30 text images, manifest and OCR table.

Eval and test texts repeat training texts (rendered in different colours, so
every image file is distinct) which lets a memorizing classifier score 1.0.
"""
import csv
import json
import os

from PIL import Image, ImageDraw, ImageFont

HERE = os.path.dirname(os.path.abspath(__file__))

TRAIN = {
    "INDIVIDUAL": [
        "that senator should resign today",
        "this governor ignores every warning",
        "the minister lied about the floods",
        "he mocks the marchers on tv again",
        "she calls activists paid actors",
        "the mayor blocked the clean air bill",
    ],
    "COMMUNITY": [
        "all those protesters are useless",
        "young activists ruin every city",
        "these marchers never work a day",
        "farmers keep blocking our roads",
        "students only protest for selfies",
        "city folk know nothing of the land",
    ],
    "ORGANIZATION": [
        "big oil bought the whole summit",
        "that coal company poisons rivers",
        "the bank funds every new pipeline",
        "this airline greenwashes its fleet",
        "the lobby group wrote the new law",
        "that newspaper spreads denial daily",
    ],
}

# (label, index into TRAIN[label]) for held-in eval and test instances.
EVAL = [("INDIVIDUAL", 0), ("INDIVIDUAL", 3), ("COMMUNITY", 1), ("COMMUNITY", 4), ("ORGANIZATION", 2), ("ORGANIZATION", 5)]
TEST = [("INDIVIDUAL", 1), ("INDIVIDUAL", 4), ("COMMUNITY", 2), ("COMMUNITY", 5), ("ORGANIZATION", 0), ("ORGANIZATION", 3)]

COLOURS = {"train": ((255, 255, 255), (0, 0, 0)), "eval": ((255, 244, 214), (60, 20, 20)), "test": ((220, 236, 255), (10, 30, 80))}


def render(text, split, path):
    bg, fg = COLOURS[split]
    img = Image.new("RGB", (360, 64), bg)
    draw = ImageDraw.Draw(img)
    draw.text((10, 24), text.upper(), fill=fg, font=ImageFont.load_default())
    img.save(path, optimize=True)


def main():
    os.makedirs(os.path.join(HERE, "images"), exist_ok=True)
    rows, table = [], {}

    def add(iid, split, label, text):
        rel = f"images/{iid}.png"
        render(text, split, os.path.join(HERE, rel))
        rows.append({"id": iid, "image_path": rel, "label": label, "split": split})
        table[rel] = text

    n = 0
    for label, texts in TRAIN.items():
        for text in texts:
            n += 1
            add(f"tr{n:02d}", "train", label, text)
    for split, picks in (("eval", EVAL), ("test", TEST)):
        for i, (label, idx) in enumerate(picks, 1):
            add(f"{split[:2]}{i:02d}", split, label, TRAIN[label][idx])

    with open(os.path.join(HERE, "manifest.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["id", "image_path", "label", "split"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    with open(os.path.join(HERE, "ocr_table.json"), "w") as f:
        json.dump(table, f, indent=2, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
