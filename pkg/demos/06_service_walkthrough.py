"""Drive the HTTP service in-process: queue, label submission, retraining,
agreement, and the analysis endpoints."""

from pathlib import Path
from tempfile import TemporaryDirectory

from fastapi.testclient import TestClient

from micoder.annotation import write_label_file
from micoder.cli import main as cli_main
from micoder.corpus import write_corpus
from micoder.service import ServiceConfig, create_app
from micoder.simgen import GeneratorSpec, generate_corpus, labels_to_records

with TemporaryDirectory() as tmp:
    root = Path(tmp)
    corpus, truth, _ = generate_corpus(GeneratorSpec(seed=5, n_conversations=60, mean_length=12.0))
    write_corpus(corpus, root / "corpus.jsonl")
    write_label_file(labels_to_records(truth), root / "truth.labels")
    cli_main(
        ["train", "--input", str(root / "corpus.jsonl"), "--labels", str(root / "truth.labels"),
         "--models", str(root / "registry"), "--k", "1", "--epochs", "6"]
    )

    config = ServiceConfig(
        corpus_path=root / "corpus.jsonl",
        labels_path=root / "annotations.jsonl",
        registry_path=root / "registry",
        k=1,
        min_span_days=0,
        min_sessions=1,
        min_utterances=2,
    )
    with TestClient(create_app(config)) as client:
        print("healthz:", client.get("/healthz").json())

        queue = client.get("/queue", params={"limit": 3}).json()
        print(f"\nqueue holds {len(queue['items'])} items at threshold {queue['threshold']}")
        item = queue["items"][0]
        print("first item:", item["utterance_id"], item["suggestions"])

        accepted = sorted(item["suggestions"])[:3]
        reply = client.post(
            "/labels",
            json={"utterance_id": item["utterance_id"], "annotator_id": "demo", "codes": accepted},
        )
        print("label accepted:", reply.json())

        # a colleague reviews the same items so agreement becomes defined
        for it in queue["items"]:
            for annotator in ("demo", "colleague"):
                client.post(
                    "/labels",
                    json={
                        "utterance_id": it["utterance_id"],
                        "annotator_id": annotator,
                        "codes": sorted(it["suggestions"])[:3],
                    },
                )

        too_many = client.post(
            "/labels",
            json={
                "utterance_id": item["utterance_id"],
                "annotator_id": "demo",
                "codes": ["Affirm", "Support", "Reflection", "Direct"],
            },
        )
        print("4-code submission ->", too_many.status_code, too_many.json())

        job = client.post("/train", json={"code": "Affirm", "k": 1}).json()
        print("\ntraining job:", job)
        import time

        while True:
            status = client.get(f"/train/{job['job_id']}").json()
            if status["status"] in ("done", "failed"):
                break
            time.sleep(0.05)
        print("job finished:", status)

        agreement = client.get("/agreement").json()
        print("\nagreement cumulative:", agreement["cumulative"])
        trends = client.get("/analysis/trends").json()
        print(f"trend rows: {len(trends['rows'])}")
