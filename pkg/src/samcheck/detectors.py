"""LLM-backed detectors sharing the detector interface of the miner baseline."""

from __future__ import annotations

from samcheck.findings import DetectionReport, parse_response
from samcheck.gateway import Gateway
from samcheck.prompt import PROMPT_VERSION, Variant, build_prompt
from samcheck.template import ConfigDocument

DETECTOR_NAMES = {Variant.SLS: "SlsDetector", Variant.BASIC: "BasicLLM"}


class LlmDetector:
    """Prompt a model with the template and parse its delimited answer."""

    def __init__(self, gateway: Gateway, variant: Variant | str = Variant.SLS):
        self.gateway = gateway
        self.variant = Variant(variant)
        self.name = DETECTOR_NAMES[self.variant]

    def prompt_for(self, doc: ConfigDocument) -> str:
        return build_prompt(doc.source_text, self.variant)

    def detect(self, doc: ConfigDocument, repetition: int = 0) -> DetectionReport:
        response = self.gateway.ask(self.prompt_for(doc), repetition=repetition)
        return parse_response(response.raw_text, doc, self.name)

    def provenance(self) -> dict:
        return {"detector": self.name, "prompt_version": PROMPT_VERSION, **self.gateway.provenance()}
