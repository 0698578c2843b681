import json

import pytest

from emspipe.errors import SchemaError
from emspipe.kb import load_knowledge_base, load_reference_kb


def write_kb(tmp_path, raw):
    path = tmp_path / "kb.json"
    path.write_text(json.dumps(raw))
    return path


def minimal_kb():
    return {
        "nodes": [
            {"id": "p1", "kind": "protocol", "name": "p1"},
            {"id": "symptom:cough", "kind": "symptom", "name": "cough", "terms": ["cough"]},
        ],
        "edges": [{"src": "p1", "dst": "symptom:cough", "relation": "has_symptom"}],
        "groups": [],
        "interventions": {},
    }


class TestReferenceKb:
    def test_has_43_protocols(self):
        assert len(load_reference_kb().protocol_ids()) == 43

    def test_named_protocols_present(self):
        kb = load_reference_kb()
        assert kb.has_protocol("medical - chest pain - cardiac suspected (protocol 2 - 1)")
        assert kb.has_protocol("medical-seizure (adult protocol 3-12)")
        assert kb.has_protocol("medical-seizure (pediatric protocol 9-12)")

    def test_seizure_group_pairing(self):
        kb = load_reference_kb()
        group = kb.group_of("medical-seizure (pediatric protocol 9-12)")
        assert group is not None
        assert group.adult == "medical-seizure (adult protocol 3-12)"

    def test_vision_enabled_candidate_lists(self):
        kb = load_reference_kb()
        cardiac = kb.intervention_labels("medical - chest pain - cardiac suspected (protocol 2 - 1)")
        assert cardiac == [
            "Attaching Defibrillator",
            "Inserting IV to arm",
            "Inserting IV to leg",
            "Defibrillator",
        ]
        resp = kb.intervention_labels(
            "medical - respiratory distress/asthma/copd/croup/reactive airway (respiratory distress)"
        )
        assert resp == [
            "Placing Oxygen mask on face",
            "Attaching nebulizer",
            "Inserting airway adjunct",
            "Administering albuterol",
        ]
        assert len(kb.all_intervention_labels()) == 8

    def test_each_protocol_in_at_most_one_group(self):
        kb = load_reference_kb()
        members = [m for g in kb.groups for m in (g.adult, g.pediatric)]
        assert len(members) == len(set(members))


class TestValidation:
    def test_minimal_kb_loads(self, tmp_path):
        kb = load_knowledge_base(write_kb(tmp_path, minimal_kb()))
        assert kb.protocol_ids() == ["p1"]
        assert kb.scored_terms("p1") == ["cough"]

    def test_dangling_edge_rejected(self, tmp_path):
        raw = minimal_kb()
        raw["edges"].append({"src": "p1", "dst": "missing", "relation": "has_symptom"})
        with pytest.raises(SchemaError) as err:
            load_knowledge_base(write_kb(tmp_path, raw))
        assert err.value.rule == "edge endpoint"

    def test_duplicate_node_id_rejected(self, tmp_path):
        raw = minimal_kb()
        raw["nodes"].append({"id": "p1", "kind": "protocol", "name": "dup"})
        with pytest.raises(SchemaError) as err:
            load_knowledge_base(write_kb(tmp_path, raw))
        assert err.value.rule == "duplicate node id"

    def test_empty_nodes_rejected(self, tmp_path):
        with pytest.raises(SchemaError):
            load_knowledge_base(write_kb(tmp_path, {"nodes": []}))

    def test_no_protocol_rejected(self, tmp_path):
        raw = {"nodes": [{"id": "s", "kind": "symptom", "name": "s"}]}
        with pytest.raises(SchemaError) as err:
            load_knowledge_base(write_kb(tmp_path, raw))
        assert "protocol" in err.value.rule

    def test_protocol_in_two_groups_rejected(self, tmp_path):
        raw = minimal_kb()
        raw["nodes"] += [
            {"id": "p2", "kind": "protocol", "name": "p2"},
            {"id": "p3", "kind": "protocol", "name": "p3"},
        ]
        raw["groups"] = [
            {"group_id": "g1", "adult": "p1", "pediatric": "p2"},
            {"group_id": "g2", "adult": "p1", "pediatric": "p3"},
        ]
        with pytest.raises(SchemaError) as err:
            load_knowledge_base(write_kb(tmp_path, raw))
        assert err.value.rule == "protocol in multiple groups"

    def test_empty_intervention_list_rejected(self, tmp_path):
        raw = minimal_kb()
        raw["interventions"] = {"p1": []}
        with pytest.raises(SchemaError) as err:
            load_knowledge_base(write_kb(tmp_path, raw))
        assert err.value.rule == "intervention labels"

    def test_bad_relation_rejected(self, tmp_path):
        raw = minimal_kb()
        raw["edges"][0]["relation"] = "likes"
        with pytest.raises(SchemaError) as err:
            load_knowledge_base(write_kb(tmp_path, raw))
        assert err.value.rule == "edge relation"

    def test_wrong_target_kind_rejected(self, tmp_path):
        raw = minimal_kb()
        raw["edges"][0]["relation"] = "uses_medication"
        with pytest.raises(SchemaError) as err:
            load_knowledge_base(write_kb(tmp_path, raw))
        assert err.value.rule == "edge target kind"

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "kb.json"
        path.write_text("{nope")
        with pytest.raises(SchemaError) as err:
            load_knowledge_base(path)
        assert err.value.rule == "invalid json"
