"""Generate the planted-rule corpus under datasets/planted.

Twenty templates share one guaranteed dependency: every AWS::Serverless::Api
declares StageName.  Values that vary per file (handlers and stage names)
never reach the support threshold, while Runtime and MemorySize cycle through
small pools.  The held-out template drops StageName and otherwise copies file
3, so the only violated pattern is the planted one.

Run from the repository root: ``python3 scripts/build_planted_corpus.py``.
"""

from __future__ import annotations

from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "datasets" / "planted"
RUNTIMES = ["python3.12", "nodejs20.x", "java21", "ruby3.3"]
MEMORY = [128, 256, 512, 1024, 2048]
FILES = 20
HELD_OUT_TWIN = 3

TEMPLATE = """\
Resources:
  MyApi:
    Type: AWS::Serverless::Api
    Properties:
{stage}      TracingEnabled: true
  ServiceFunction:
    Type: AWS::Serverless::Function
    Properties:
      Handler: svc{i}.handler
      Runtime: {runtime}
      MemorySize: {memory}
"""


def render(i: int, with_stage: bool = True) -> str:
    stage = f"      StageName: stage{i}\n" if with_stage else ""
    return TEMPLATE.format(i=i, stage=stage, runtime=RUNTIMES[i % len(RUNTIMES)], memory=MEMORY[i % len(MEMORY)])


def main() -> None:
    corpus = OUT / "corpus"
    corpus.mkdir(parents=True, exist_ok=True)
    for i in range(FILES):
        (corpus / f"svc{i:02d}.yaml").write_text(render(i), encoding="utf-8")
    (OUT / "held_out.yaml").write_text(render(HELD_OUT_TWIN, with_stage=False), encoding="utf-8")
    print(f"wrote {FILES} corpus files and held_out.yaml to {OUT}")


if __name__ == "__main__":
    main()
