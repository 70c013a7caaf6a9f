#!/usr/bin/env python3
"""Convert Cora into the dataset directory layout read by trustglm.

Two raw formats are understood:

  linqs      cora.content (paper_id, 1433 binary words, label) and cora.cites
  planetoid  ind.cora.{x,tx,allx,y,ty,ally,graph,test.index} (needs scipy)

Raw paper texts are optional (--texts): a JSONL file with {"id", "text"} per
line, where id is the LINQS paper id (linqs) or the node index (planetoid).
Without it every node gets an empty text.

LINQS ships no split, so one is drawn with --split-seed (60/20/20 by default).
Planetoid keeps its standard 140/500/1000 split.
"""

import argparse
import json
import pickle
import struct
import sys
from pathlib import Path

import numpy as np

# Planetoid label index -> LINQS class name.
PLANETOID_CLASSES = ["Theory", "Reinforcement_Learning", "Genetic_Algorithms", "Neural_Networks",
                     "Probabilistic_Methods", "Case_Based", "Rule_Learning"]


def pretty(name):
    return name.replace("_", " ")


def load_texts(path, key_type):
    if path is None:
        return {}
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                out[key_type(row["id"])] = row["text"]
            except (ValueError, KeyError) as e:
                sys.exit(f"{path}:{lineno}: {e}")
    return out


def read_linqs(root, texts_path, split_seed, train_frac, val_frac):
    ids, feats, labels = [], [], []
    with open(root / "cora.content") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            feats.append([float(v) for v in parts[1:-1]])
            labels.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(labels))
    y = [classes.index(l) for l in labels]
    edges = set()
    with open(root / "cora.cites") as f:
        for line in f:
            parts = line.split()
            if len(parts) != 2 or parts[0] not in index or parts[1] not in index:
                continue
            u, v = index[parts[0]], index[parts[1]]
            if u != v:
                edges.add((min(u, v), max(u, v)))
    texts_by_id = load_texts(texts_path, str)
    texts = [texts_by_id.get(pid, "") for pid in ids]
    n = len(ids)
    order = np.random.default_rng(split_seed).permutation(n)
    n_train, n_val = int(round(train_frac * n)), int(round(val_frac * n))
    split = {"train": sorted(order[:n_train].tolist()),
             "val": sorted(order[n_train:n_train + n_val].tolist()),
             "test": sorted(order[n_train + n_val:].tolist())}
    return np.asarray(feats, dtype=np.float32), y, [pretty(c) for c in classes], sorted(edges), texts, split


def read_planetoid(root, texts_path):
    def load(name):
        with open(root / f"ind.cora.{name}", "rb") as f:
            return pickle.load(f, encoding="latin1")

    x, tx, allx, y, ty, ally, graph = (load(k) for k in ["x", "tx", "allx", "y", "ty", "ally", "graph"])
    test_index = [int(l) for l in open(root / "ind.cora.test.index")]
    test_sorted = sorted(test_index)
    features = np.vstack([allx.toarray(), tx.toarray()])
    onehot = np.vstack([ally, ty])
    features[test_index, :] = features[test_sorted, :]
    onehot[test_index, :] = onehot[test_sorted, :]
    labels = onehot.argmax(1).tolist()
    n = features.shape[0]
    edges = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v:
                edges.add((min(u, v), max(u, v)))
    texts_by_id = load_texts(texts_path, int)
    texts = [texts_by_id.get(i, "") for i in range(n)]
    split = {"train": list(range(y.shape[0])),
             "val": list(range(y.shape[0], y.shape[0] + 500)),
             "test": test_sorted}
    return features.astype(np.float32), labels, [pretty(c) for c in PLANETOID_CLASSES], sorted(edges), texts, split


def write(out, features, labels, classes, edges, texts, split):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "edges.tsv", "w") as f:
        for u, v in edges:
            f.write(f"{u}\t{v}\n")
    with open(out / "features.f32", "wb") as f:
        f.write(struct.pack("<II", *features.shape))
        f.write(features.astype("<f4").tobytes())
    with open(out / "texts.jsonl", "w", encoding="utf-8") as f:
        for i, t in enumerate(texts):
            f.write(json.dumps({"id": i, "text": t}, ensure_ascii=False) + "\n")
    with open(out / "labels.csv", "w") as f:
        f.write("node_id,label_index\n")
        for i, l in enumerate(labels):
            f.write(f"{i},{l}\n")
    (out / "classes.json").write_text(json.dumps(classes) + "\n")
    (out / "split.json").write_text(json.dumps(split) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("raw", type=Path, help="directory with the raw files")
    ap.add_argument("out", type=Path, help="output dataset directory")
    ap.add_argument("--format", choices=["linqs", "planetoid"], default="linqs")
    ap.add_argument("--texts", type=Path)
    ap.add_argument("--split-seed", type=int, default=0)
    ap.add_argument("--train", type=float, default=0.6)
    ap.add_argument("--val", type=float, default=0.2)
    args = ap.parse_args()
    if args.format == "linqs":
        data = read_linqs(args.raw, args.texts, args.split_seed, args.train, args.val)
    else:
        data = read_planetoid(args.raw, args.texts)
    write(args.out, *data)
    features, _, classes, edges, _, _ = data
    print(f"{features.shape[0]} nodes, {len(edges)} undirected edges ({2 * len(edges)} directed), "
          f"{len(classes)} classes -> {args.out}")


if __name__ == "__main__":
    main()
