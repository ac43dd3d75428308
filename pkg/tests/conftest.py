import pytest

from detaudit.records import (
    ActionTrace,
    AttributionRanking,
    EmbeddingVector,
    GenerationOutput,
    RunRecord,
    RunSet,
    ScalarPrediction,
)


def make_set(instance_id, payloads, group_key="", config=None):
    """RunSet with generated run ids, in given payload order."""
    records = [
        RunRecord(
            run_id=f"r{i:03d}",
            instance_id=instance_id,
            config=dict(config or {}),
            payload=p,
        )
        for i, p in enumerate(payloads)
    ]
    return RunSet(instance_id=instance_id, group_key=group_key, records=records)


def ranking(*ids_and_attrs):
    """AttributionRanking from (feature_id, attribution) pairs."""
    return AttributionRanking(features=list(ids_and_attrs))


def ranking_from_order(ids):
    """Ranking whose canonical order equals ids (descending synthetic weights)."""
    n = len(ids)
    return AttributionRanking(features=[(fid, float(n - i)) for i, fid in enumerate(ids)])


def embedding(values, label=None):
    return EmbeddingVector(values=list(values), label=label)


def generation(text, entities=(), emb=None, logits=None):
    return GenerationOutput(
        text=text, entities=list(entities), embedding=emb, logits=logits
    )


def trace(*actions):
    return ActionTrace(actions=list(actions))


def scalar(score, label="x"):
    return ScalarPrediction(score=score, label=label)


@pytest.fixture
def tmp_jsonl(tmp_path):
    def write(lines, name="corpus.jsonl"):
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return write
