import json
from concurrent.futures import ThreadPoolExecutor

import pytest

from empgen.fixtures import (
    GOLDEN_PROMPT_PATH,
    case_analysis_fixture_rows,
    case_sample,
)
from empgen.knowledge import (
    RELATIONS,
    AnalysisCache,
    EchoLlmClient,
    FixtureCommonsenseProvider,
    FixtureLlmClient,
    HttpLlmClient,
    HttpLlmConfig,
    LlmError,
    TemplateCommonsenseProvider,
    build_analysis_prompt,
    generate_commonsense,
    prompt_cache_key,
    query_analysis,
)
from empgen.selectors import FixtureMissError
from empgen.util import write_jsonl


def test_bundle_has_exactly_five_relations():
    bundle = generate_commonsense("i passed my exam", TemplateCommonsenseProvider())
    assert tuple(bundle.relations.keys()) == RELATIONS
    assert all(bundle.relations.values())


def test_template_backend_deterministic():
    provider = TemplateCommonsenseProvider()
    a = provider.generate("i passed my exam today")
    b = provider.generate("i passed my exam today")
    assert a.relations == b.relations


def test_fixture_commonsense_lookup_and_miss(tmp_path):
    utterance = "i met my old friend"
    h = FixtureCommonsenseProvider.utterance_hash(utterance)
    authored = {r: f"authored {r} text" for r in RELATIONS}
    write_jsonl(tmp_path / "k.jsonl", [{"hash": h, "utterance": utterance, "relations": authored}])
    provider = FixtureCommonsenseProvider(tmp_path / "k.jsonl")
    assert provider.generate(utterance).relations == authored
    with pytest.raises(FixtureMissError, match="hash"):
        provider.generate("different text")


def test_prompt_contains_three_blocks(labels):
    sample = case_sample(labels)
    prompt = build_analysis_prompt(sample, labels.get("grateful"))
    assert "psychologist" in prompt
    assert "Speaker: One of the times" in prompt
    assert "Listener: That is a very blessed day" in prompt
    assert prompt.rstrip().endswith("Sentiment label: grateful")
    # three blocks joined by blank lines
    assert prompt.count("\n\n") >= 2


def test_prompt_empty_history_errors(labels):
    with pytest.raises(ValueError, match="empty"):
        build_analysis_prompt([], labels.get("sad"))


def test_prompt_injective_on_label(labels):
    sample = case_sample(labels)
    a = build_analysis_prompt(sample, labels.get("grateful"))
    b = build_analysis_prompt(sample, labels.get("lonely"))
    assert a != b


def test_prompt_matches_golden_bytes(labels):
    sample = case_sample(labels)
    prompt = build_analysis_prompt(sample, sample.gold_emotion)
    assert prompt.encode("utf-8") == GOLDEN_PROMPT_PATH.read_bytes()


def test_cache_idempotent_single_backend_call(tmp_path):
    client = EchoLlmClient()
    cache = AnalysisCache(tmp_path / "cache.jsonl")
    first = query_analysis("Sentiment label: proud", client, cache)
    second = query_analysis("Sentiment label: proud", client, cache)
    assert client.calls == 1
    assert first == second
    # reload from disk: still a hit, still no backend call
    cache2 = AnalysisCache(tmp_path / "cache.jsonl")
    third = query_analysis("Sentiment label: proud", client, cache2)
    assert client.calls == 1
    assert third.response == first.response


def test_echo_contains_sentiment_word():
    client = EchoLlmClient()
    record = query_analysis("dialogue text\n\nSentiment label: hopeful", client, AnalysisCache())
    assert "hopeful" in record.response
    assert record.cache_key == prompt_cache_key("dialogue text\n\nSentiment label: hopeful")
    assert len(record.cache_key) == 64


def test_fixture_llm_returns_case_paragraph(labels, tmp_path):
    rows = case_analysis_fixture_rows()
    write_jsonl(tmp_path / "fx.jsonl", rows)
    client = FixtureLlmClient(tmp_path / "fx.jsonl")
    sample = case_sample(labels)
    prompt = build_analysis_prompt(sample, sample.gold_emotion)
    record = query_analysis(prompt, client, AnalysisCache())
    assert record.response.startswith("Based on the content of the dialogue")


def test_concurrent_warm_cache_reads(tmp_path):
    client = EchoLlmClient()
    cache = AnalysisCache(tmp_path / "cache.jsonl")
    prompts = [f"dialogue {i}\n\nSentiment label: proud" for i in range(4)]
    for p in prompts:
        query_analysis(p, client, cache)
    calls_before = client.calls

    def read_all(_):
        return [query_analysis(p, client, cache).response for p in prompts]

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(read_all, range(8)))
    assert client.calls == calls_before
    assert all(r == results[0] for r in results)


def test_cache_serialized_appends_under_threads(tmp_path):
    client = EchoLlmClient()
    cache = AnalysisCache(tmp_path / "cache.jsonl")
    prompts = [f"p {i}\n\nSentiment label: sad" for i in range(16)]

    def build(p):
        return query_analysis(p, client, cache)

    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(build, prompts))
    lines = (tmp_path / "cache.jsonl").read_text().strip().splitlines()
    assert len(lines) == 16
    for line in lines:
        json.loads(line)


def test_http_client_retries_then_succeeds():
    attempts = []

    def transport(payload):
        attempts.append(payload)
        if len(attempts) < 3:
            raise OSError("connection reset")
        return {"choices": [{"message": {"content": "analysis text"}}]}

    client = HttpLlmClient(
        HttpLlmConfig("http://example.invalid", "test-model"), transport=transport, sleep=lambda s: None
    )
    assert client.complete("Sentiment label: sad") == "analysis text"
    assert len(attempts) == 3


def test_http_client_fails_with_cache_key():
    def transport(payload):
        raise OSError("down")

    client = HttpLlmClient(
        HttpLlmConfig("http://example.invalid", "m", retries=2), transport=transport, sleep=lambda s: None
    )
    key = prompt_cache_key("prompt body")
    with pytest.raises(LlmError, match=key):
        client.complete("prompt body")


def test_bundle_relation_property(rng):
    provider = TemplateCommonsenseProvider()
    for i in range(25):
        n = int(rng.integers(1, 8))
        text = " ".join(f"word{int(w)}" for w in rng.integers(0, 50, n))
        bundle = provider.generate(text)
        assert len(bundle.relations) == 5
        assert tuple(bundle.relations.keys()) == RELATIONS
