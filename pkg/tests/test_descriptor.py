from __future__ import annotations

import io
import json
from pathlib import Path

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from signrag._remote import APIClient, parse_json_reply
from signrag.descriptor import (
    DEFAULT_PLACEHOLDERS,
    MockDescriptor,
    RemoteDescriptor,
    SignDescription,
    abstract_text,
    describe_reference,
    describe_scene,
    validate_abstraction,
)
from signrag.errors import BackendError, DegradedOutputError, TransportError, ValidationError
from signrag.fixtures import FIXTURE_CLASSES, make_image

GOLDEN = Path(__file__).parent / "golden"


def _png(w, h, color=(255, 255, 255)):
    buf = io.BytesIO()
    Image.new("RGB", (w, h), color).save(buf, format="PNG")
    return buf.getvalue()


def test_speed_limit_reference_is_abstracted(catalog, backends):
    desc = describe_reference(catalog.get("R2-1").reference_image, backends.descriptor)
    assert "<two-digit number>" in desc.appearance
    assert "50" not in desc.appearance
    assert desc.location is None


def test_same_image_twice_is_identical(catalog, backends):
    img = catalog.get("R7-2").reference_image
    assert describe_reference(img, backends.descriptor) == describe_reference(img, backends.descriptor)


def test_mock_is_pure_function_of_bytes_and_seed(catalog):
    a = MockDescriptor.from_catalog(catalog, seed=3)
    b = MockDescriptor.from_catalog(catalog, seed=3)
    img = catalog.get("R1-1").reference_image
    assert describe_reference(img, a) == describe_reference(img, b)


@pytest.mark.parametrize("size", [(1, 1), (2, 3), (64, 64)])
def test_degenerate_images_never_crash(backends, size):
    with pytest.raises(DegradedOutputError):
        describe_scene(_png(*size), backends.descriptor)


@settings(max_examples=50, deadline=None)
@given(st.binary(max_size=64))
def test_garbage_bytes_raise_typed_errors(backends, data):
    with pytest.raises((ValidationError, DegradedOutputError)):
        describe_scene(data, backends.descriptor)


def test_two_sign_scene(corpus, backends):
    descs = describe_scene(corpus.scene_two_signs, backends.descriptor)
    assert len(descs) == 2
    assert descs[0].location != descs[1].location
    assert all(d.location for d in descs)


def test_empty_scene(corpus, backends):
    assert describe_scene(corpus.scene_empty, backends.descriptor) == []


def test_scene_matches_golden(corpus, backends):
    golden = json.loads((GOLDEN / "two_sign_scene.json").read_text())
    got = [d.to_dict() for d in describe_scene(corpus.scene_two_signs, backends.descriptor)]
    assert got == golden


def test_reference_strips_location(catalog, backends):
    img = catalog.get("R1-1").reference_image
    assert describe_reference(img, backends.descriptor).location is None
    scene = describe_scene(img, backends.descriptor)
    assert scene[0].location


def test_placeholder_vocabulary():
    SignDescription("SPEED LIMIT <two-digit number>").check_vocabulary()
    with pytest.raises(ValidationError):
        SignDescription("SPEED LIMIT <value>").check_vocabulary()
    with pytest.raises(ValidationError):
        SignDescription("   ")


def test_canonical_violation_flagged():
    found = validate_abstraction("white rectangular sign reading SPEED LIMIT 50")
    assert [v.text for v in found] == ["50"]


def test_placeholder_form_passes():
    assert validate_abstraction("white rectangular sign reading SPEED LIMIT <two-digit number>") == []


@pytest.mark.parametrize("text, expected", [
    ("NO PARKING 8 AM - 6 PM", ["8 AM - 6 PM"]),
    ("TURN ONTO Main Street", ["Main Street"]),
    ("MINIMUM SPEED 40.", ["40"]),
    ("route R2-1 sign", []),
    ("10.5 ton limit", []),
])
def test_rules(text, expected):
    assert [v.text for v in validate_abstraction(text)] == expected


def test_abstract_text_round_trip():
    out = abstract_text("SPEED LIMIT 50 NO PARKING 8 AM - 6 PM")
    assert out == "SPEED LIMIT <two-digit number> NO PARKING <time range>"
    assert validate_abstraction(out) == []


def test_zero_violations_across_fixture_catalog(indexed):
    assert indexed.n_violations == 0
    for sign in indexed.catalog:
        assert validate_abstraction(sign.description) == []


def test_fixture_names_do_contain_concrete_content():
    # guards the test above against vacuity
    assert any(validate_abstraction(name.upper()) for _, name in FIXTURE_CLASSES)


def _chat_transport(reply, status=200, seen=None):
    def handler(request):
        if seen is not None:
            seen.append(request)
        if status != 200:
            return httpx.Response(status, text="nope")
        return httpx.Response(200, json={"choices": [{"message": {"content": reply}}]})
    return httpx.MockTransport(handler)


def test_remote_descriptor_parses_scene():
    seen = []
    reply = '```json\n{"signs": [{"appearance": "red octagon reading STOP", "location": "on the right"}]}\n```'
    client = APIClient("https://example.invalid/v1", "sk-secret", transport=_chat_transport(reply, seen=seen))
    descs = describe_scene(make_image("x"), RemoteDescriptor(client, "vlm"))
    assert descs == [SignDescription("red octagon reading STOP", "on the right")]
    body = json.loads(seen[0].content)
    assert body["model"] == "vlm"
    assert body["messages"][0]["content"][1]["image_url"]["url"].startswith("data:image/png;base64,")
    assert seen[0].headers["authorization"] == "Bearer sk-secret"


def test_remote_descriptor_prompt_lists_placeholders():
    seen = []
    client = APIClient("https://example.invalid/v1", transport=_chat_transport('{"signs": []}', seen=seen))
    describe_scene(make_image("x"), RemoteDescriptor(client, "vlm"))
    text = json.loads(seen[0].content)["messages"][0]["content"][0]["text"]
    for token in DEFAULT_PLACEHOLDERS:
        assert token in text


@pytest.mark.parametrize("status, error", [(503, TransportError), (429, TransportError), (401, BackendError)])
def test_remote_errors_are_typed(status, error):
    client = APIClient("https://example.invalid/v1", transport=_chat_transport("", status=status))
    with pytest.raises(error):
        RemoteDescriptor(client, "vlm").describe_scene(make_image("x"))


def test_remote_empty_reply_is_degraded():
    client = APIClient("https://example.invalid/v1", transport=_chat_transport("  "))
    with pytest.raises(DegradedOutputError):
        RemoteDescriptor(client, "vlm").describe_reference(make_image("x"))


def test_unreachable_backend_is_retryable():
    def handler(request):
        raise httpx.ConnectError("refused", request=request)
    client = APIClient("https://example.invalid/v1", transport=httpx.MockTransport(handler))
    with pytest.raises(TransportError):
        RemoteDescriptor(client, "vlm").describe_scene(make_image("x"))


def test_api_key_never_logged(caplog):
    client = APIClient("https://example.invalid/v1", "sk-very-secret", verbose=True,
                       transport=_chat_transport('{"signs": []}'))
    with caplog.at_level("INFO"):
        RemoteDescriptor(client, "vlm").describe_scene(make_image("x"))
    assert "sk-very-secret" not in caplog.text
    assert "***" in caplog.text


def test_parse_json_reply():
    assert parse_json_reply('noise {"a": 1} trailing') == {"a": 1}
    with pytest.raises(DegradedOutputError):
        parse_json_reply("no json here")
