"""Build an annotation-store fixture for the UI integration test.

Creates a store of host_speech tasks over two separable voice clusters plus
the speaker-embedding table the calibrate-audio stage reads, and a truth map
the scripted session answers from.
"""

import json
import sys
from pathlib import Path

import numpy as np

from twoshot.annosvc import LabelStore, TaskCandidate
from twoshot.ingest import EmbeddingTable, write_embeddings

DIM = 16


def main() -> None:
    target = Path(sys.argv[1])
    count = int(sys.argv[2]) if len(sys.argv) > 2 else 60
    rng = np.random.default_rng(123)
    host = rng.standard_normal(DIM)
    host /= np.linalg.norm(host)
    raw = rng.standard_normal(DIM)
    perp = raw - (raw @ host) * host
    perp /= np.linalg.norm(perp)
    other = 0.1 * host + np.sqrt(1 - 0.01) * perp

    vectors = {}
    truth = {}
    candidates = []
    for i in range(count):
        is_host = i % 2 == 0
        mean = host if is_host else other
        vec = mean + 0.04 * rng.standard_normal(DIM)
        embedding_id = f"seg-{i:03d}"
        vectors[embedding_id] = vec / np.linalg.norm(vec)
        truth[embedding_id] = "positive" if is_host else "negative"
        candidates.append(
            TaskCandidate(
                payload_ref=f"audio/clip0/{embedding_id}.wav",
                context={"clip_id": "clip0", "embedding_id": embedding_id},
            )
        )

    (target / "out" / "ingest").mkdir(parents=True, exist_ok=True)
    write_embeddings(EmbeddingTable(DIM, vectors), target / "out" / "ingest" / "speaker_embeddings.tsv")
    store = LabelStore(target / "store", lease_seconds=300)
    created = store.create_tasks("host_speech", candidates, 1.0)
    (target / "truth.json").write_text(json.dumps(truth, sort_keys=True), encoding="utf-8")
    (target / "config.yaml").write_text(
        f"labels:\n  store_dir: {target / 'store'}\noutput_dir: {target / 'out'}\n",
        encoding="utf-8",
    )
    print(json.dumps({"tasks": created}))


if __name__ == "__main__":
    main()
