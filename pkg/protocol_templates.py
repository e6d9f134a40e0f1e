from typing import Any, Dict, List, Optional

from bench_data import CaseLabel, ContinualProtocol, DomainTransform, SessionSpec
from errors import LabError

DOMAIN_A = {"palette_angle": 0.0, "noise_sigma": 0.03, "gamma": 1.0}
DOMAIN_B = {"palette_angle": 0.9, "noise_sigma": 0.05, "gamma": 0.8}
DOMAIN_C = {"palette_angle": 1.8, "noise_sigma": 0.04, "gamma": 1.25}


class ProtocolTemplate:
    def __init__(self, name: str, description: str, sessions: List[Dict[str, Any]]):
        self.name = name
        self.description = description
        self.sessions = sessions
        self.case_labels = [CaseLabel(s["case"]) for s in sessions[1:]]

    def build(self, shots: int = 5, unlabeled_count: int = 50, test_count: int = 20,
              base_labeled: Optional[int] = None, base_test: Optional[int] = None) -> ContinualProtocol:
        """Instantiate with N_t = shots x |C_t| for incremental sessions."""
        incremental = [shots * len(s["classes"]) for s in self.sessions[1:]]
        base_classes = len(self.sessions[0]["classes"])
        if base_labeled is None:
            base_labeled = max(10 * max(incremental, default=0), 20 * base_classes)
        sessions = []
        for index, session in enumerate(self.sessions):
            is_base = index == 0
            sessions.append(SessionSpec(
                index=index,
                class_ids=tuple(session["classes"]),
                domain=DomainTransform(**session["domain"]),
                labeled_count=base_labeled if is_base else incremental[index - 1],
                unlabeled_count=0 if is_base else unlabeled_count,
                shots=max(1, base_labeled // base_classes) if is_base else shots,
                test_count=(base_test or test_count) if is_base else test_count,
            ))
        return ContinualProtocol(name=self.name, sessions=sessions, case_labels=list(self.case_labels))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "sessions": len(self.sessions),
            "cases": [c.value for c in self.case_labels],
        }


class ProtocolTemplateManager:
    def __init__(self):
        self.templates: Dict[str, ProtocolTemplate] = {}
        self._load_default_templates()

    def _load_default_templates(self):
        # New shapes arrive together with a new rendering domain at every step
        joint_shift = ProtocolTemplate(
            name="joint-shift-3",
            description="Base session then two sessions that change classes and domain together",
            sessions=[
                {"classes": [1, 2, 3], "domain": DOMAIN_A},
                {"classes": [4, 5], "domain": DOMAIN_B, "case": "joint-shift"},
                {"classes": [1, 4], "domain": DOMAIN_C, "case": "joint-shift"},
            ],
        )

        domain_shift = ProtocolTemplate(
            name="domain-shift-2",
            description="Same classes re-rendered under a rotated palette and new gamma",
            sessions=[
                {"classes": [1, 2, 3], "domain": DOMAIN_A},
                {"classes": [1, 2, 3], "domain": DOMAIN_B, "case": "domain-shift"},
            ],
        )

        class_evolution = ProtocolTemplate(
            name="class-evolution-3",
            description="Disjoint class sets added in a fixed domain",
            sessions=[
                {"classes": [1, 2], "domain": DOMAIN_A},
                {"classes": [3, 4], "domain": DOMAIN_A, "case": "class-evolution"},
                {"classes": [5], "domain": DOMAIN_A, "case": "class-evolution"},
            ],
        )

        single_session = ProtocolTemplate(
            name="single-session",
            description="Base session only; no incremental mechanism is engaged",
            sessions=[{"classes": [1, 2, 3, 4, 5], "domain": DOMAIN_A}],
        )

        for template in (joint_shift, domain_shift, class_evolution, single_session):
            self.templates[template.name] = template

    def get_template(self, name: str) -> Optional[ProtocolTemplate]:
        return self.templates.get(name)

    def list_templates(self) -> List[Dict[str, str]]:
        return [
            {"name": name, "description": template.description}
            for name, template in self.templates.items()
        ]

    def add_template(self, template: ProtocolTemplate):
        self.templates[template.name] = template

    def build_protocol(self, name: str, **overrides) -> ContinualProtocol:
        template = self.get_template(name)
        if template is None:
            raise LabError(f"unknown protocol template {name!r}; choose from {sorted(self.templates)}")
        return template.build(**overrides)

    def validate_template(self, name: str, **overrides) -> Dict[str, Any]:
        try:
            protocol = self.build_protocol(name, **overrides)
        except LabError as e:
            return {"valid": False, "errors": [str(e)]}
        return {"valid": True, "errors": [], "sessions": len(protocol.sessions)}
