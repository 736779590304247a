"""Smoke test for the scholqa extension module.

Build first, either with `maturin develop -m crates/python/Cargo.toml` or
`cargo build -p scholqa-py --features extension-module` and then put a copy of
target/debug/libscholqa.so named scholqa.so on PYTHONPATH.
"""
import json
import pathlib
import sys

import scholqa

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "core" / "fixtures"


def main():
    assert scholqa.normalize("The H-Index, of Jane!") == ["hindex", "of", "jane"]
    assert scholqa.exact_match("the Oslo", "oslo") == 1
    assert abs(scholqa.token_f1("University of Oslo", "Oslo University") - 0.8) < 1e-12

    raw = json.loads((FIXTURES / "questions.json").read_text())
    qs = []
    for item in raw:
        field = item["author_dblp_uri"]
        entries = [field] if isinstance(field, str) else field
        uris = [u for e in entries for u in scholqa.split_author_uris(e)]
        qs.append(scholqa.Question(item["id"], item["question"], uris))
    decisions = scholqa.classify(qs)
    assert len(decisions) == len(qs)
    print("routed", len(decisions), "questions;", decisions[0])

    forge = scholqa.QueryForge()
    q = forge.author_name_query("https://dblp.org/pid/11/1111")
    assert "<https://dblp.org/pid/11/1111>" in q

    body = next((FIXTURES / "recorded" / "dblp").glob("*.json")).read_bytes()
    variables, rows = scholqa.parse_sparql_json(body)
    assert variables and rows
    try:
        scholqa.parse_sparql_json(body[: len(body) // 2])
    except ValueError:
        pass
    else:
        raise AssertionError("truncated document parsed")

    ctx = "Jane Roe has an h-index of 9."
    answer, _, start, end = scholqa.stub_answer("What is the h-index of Jane Roe?", ctx)
    assert ctx[start:end] == answer == "9", answer

    merged = scholqa.merge_streams([("q1", "")], [("q1", "x")], [("q1", "y"), ("q2", "z")])
    assert merged == [("q1", "x", "llm"), ("q2", "z", "dnc")], merged

    em, f1, answered, missing = scholqa.score({"q1": "x"}, {"q1": "x", "q2": "y"})
    assert (em, f1, answered, missing) == (0.5, 0.5, 1, 1)
    print("smoke test ok")


if __name__ == "__main__":
    sys.exit(main())
