"""Tests for src/scenario/config.py."""
from pathlib import Path

import pytest
import yaml
from src.custom_exceptions import ScenarioConfigError
from src.paging.profiles import Isa
from src.scenario.builtins import builtin_document, builtin_names
from src.scenario.config import (
    Action,
    apply_overrides,
    dump_scenario,
    load_scenario,
    parse_scenario,
    to_dict,
)
from src.tlb.tlb import Replacement, Tagging, TlbKind


@pytest.fixture
def document() -> dict:
    """Raw binary_exec document, safe to modify."""
    return builtin_document("binary_exec")


def config_error(data) -> ScenarioConfigError:
    """Parse data and return the error it raises."""
    with pytest.raises(ScenarioConfigError) as info:
        parse_scenario(data)
    return info.value


class TestParse:
    """Validation of whole documents."""

    def test_defaults(self, document):
        """Omitted sections take their documented defaults."""
        config = parse_scenario(document)
        assert config.isa is Isa.X86_64
        assert config.dram.threshold == 50_000
        assert config.dram.row_count == 1024
        assert config.tlb.entries == 64
        assert config.tlb.replacement is Replacement.LRU
        assert config.tlb.tagging is Tagging.VPN
        assert config.os.respect_mmap_hint
        assert config.aslr_seed == config.seed

    def test_steps(self, document):
        """Steps keep their fields and enum types."""
        victim = parse_scenario(document).process("victim")
        assert [step.action for step in victim.script] == [
            Action.SLEEP,
            Action.PRINT,
            Action.PRINT,
            Action.CALL_FUNCTION,
        ]
        assert victim.segments[0].blob == 1
        assert victim.script[3].format == "Actual output: {value}"

    def test_enum_case_insensitive(self, document):
        """Enum values are matched without regard to case."""
        document["tlb"] = {"replacement": "fifo", "tagging": "VPN_ASID"}
        document["processes"][1]["script"].append(
            {"tick": 20, "action": "evict_tlb_set", "va": 0x20000, "kind": "d"}
        )
        config = parse_scenario(document)
        assert config.tlb.replacement is Replacement.FIFO
        assert config.tlb.tagging is Tagging.VPN_ASID
        assert config.process("attacker").script[-1].kind is TlbKind.DATA

    def test_numbers_from_text(self, document):
        """Integers may be written as hex or exponent strings."""
        document["dram"] = {"threshold": "1e9", "row_count": "0x400"}
        config = parse_scenario(document)
        assert config.dram.threshold == 1_000_000_000
        assert config.dram.row_count == 1024

    def test_unknown_top_level_key(self, document):
        """Unknown keys are rejected by name."""
        document["colour"] = "blue"
        assert config_error(document).key_path == "colour"

    def test_unknown_nested_key(self, document):
        """The path of a nested unknown key is reported."""
        document["processes"][0]["script"][1]["bogus"] = 1
        error = config_error(document)
        assert error.key_path == "processes[0].script[1].bogus"
        assert str(error).startswith("processes[0].script[1].bogus: ")

    def test_bad_enum(self, document):
        """Enum fields list their valid values."""
        document["tlb"] = {"replacement": "RANDOM"}
        error = config_error(document)
        assert error.key_path == "tlb.replacement"
        assert "LRU" in str(error)

    def test_bad_isa(self, document):
        """An unknown ISA is a configuration error."""
        document["isa"] = "sparc"
        assert config_error(document).key_path == "isa"

    def test_bool_is_not_int(self, document):
        """true is not an integer."""
        document["seed"] = True
        assert config_error(document).key_path == "seed"

    def test_missing_required(self, document):
        """Steps need a tick."""
        del document["processes"][0]["script"][0]["tick"]
        assert config_error(document).key_path == "processes[0].script[0].tick"

    def test_action_needs_address(self, document):
        """CALL_FUNCTION without a va or segment is refused."""
        del document["processes"][1]["script"][2]["va"]
        assert config_error(document).key_path == "processes[1].script[2]"

    def test_sleep_blocks_next_step(self, document):
        """A step inside the preceding sleep is refused."""
        document["processes"][0]["script"][1]["tick"] = 4
        error = config_error(document)
        assert error.key_path == "processes[0].script[1].tick"

    def test_duplicate_tick(self, document):
        """Two processes may not share a tick."""
        document["processes"][1]["script"][2]["tick"] = 5
        error = config_error(document)
        assert error.key_path == "processes[1].script[2].tick"

    def test_unknown_segment(self, document):
        """Steps may only name declared segments or named mappings."""
        document["processes"][0]["script"][3]["segment"] = "g"
        error = config_error(document)
        assert error.key_path == "processes[0].script[3].segment"

    def test_named_mmap_is_a_segment(self, document):
        """A named MMAP can be referenced by later steps."""
        document["processes"][1]["script"] += [
            {"tick": 20, "action": "MMAP", "name": "buf", "va": 0x50000},
            {"tick": 21, "action": "TOUCH_WRITE", "segment": "buf"},
        ]
        assert parse_scenario(document).process("attacker").script[-1]

    def test_bad_format_placeholder(self, document):
        """Only {value} and {text} may appear in a format."""
        document["processes"][0]["script"][3]["format"] = "{secret}"
        error = config_error(document)
        assert error.key_path == "processes[0].script[3].format"

    def test_format_version(self, document):
        """Only format version 1 is understood."""
        document["format_version"] = 2
        assert config_error(document).key_path == "format_version"

    def test_bad_role(self, document):
        """Roles are attacker or victim."""
        document["processes"][0]["role"] = "bystander"
        assert config_error(document).key_path == "processes[0].role"

    def test_duplicate_process(self, document):
        """Process names are unique."""
        document["processes"][1]["name"] = "victim"
        document["verdict"] = []
        assert config_error(document).key_path == "processes[1].name"

    def test_no_processes(self, document):
        """A scenario needs a process."""
        document["processes"] = []
        assert config_error(document).key_path == "processes"

    def test_dram_validation(self, document):
        """Row sizes must be page multiples and densities probabilities."""
        document["dram"] = {"row_size_bytes": 6000}
        assert config_error(document).key_path == "dram.row_size_bytes"
        document["dram"] = {"density": 2.0}
        assert config_error(document).key_path == "dram.density"
        document["dram"] = {"threshold": 0}
        assert config_error(document).key_path == "dram.threshold"

    @pytest.mark.parametrize(
        "rule",
        [
            {"metric": "speed", "at_least": 1},
            {"metric": "misdirection_count"},
            {"actor": "victim", "line": "a", "contains": "b"},
            {"actor": "victim"},
        ],
    )
    def test_bad_rules(self, document, rule):
        """Rules take exactly one of their forms."""
        document["verdict"] = [rule]
        assert config_error(document).key_path.startswith("verdict[0]")

    def test_rule_actor_must_exist(self, document):
        """Rules name existing processes."""
        document["verdict"] = [{"actor": "ghost", "line": "boo"}]
        assert config_error(document).key_path == "verdict[0].actor"

    def test_not_a_mapping(self):
        """The document itself must be a mapping."""
        assert config_error(["name"]).key_path == "<root>"


class TestOverrides:
    """--set style overrides."""

    def test_nested_value(self, document):
        """Dotted keys reach nested sections, creating them if needed."""
        data = apply_overrides(document, ["dram.threshold=1e9"])
        assert parse_scenario(data).dram.threshold == 1_000_000_000
        assert "dram" not in document

    def test_list_index(self, document):
        """Numeric parts address list items."""
        data = apply_overrides(
            document, ["processes.1.script.0.va=0x30000", "seed=9"]
        )
        config = parse_scenario(data)
        assert config.process("attacker").script[0].va == 0x30000
        assert config.seed == 9

    def test_bool_value(self, document):
        """YAML scalars are parsed."""
        data = apply_overrides(document, ["tlb.honor_global=false"])
        assert parse_scenario(data).tlb.honor_global is False

    @pytest.mark.parametrize(
        "override", ["seed", "=3", "seed.x=1", "processes.9.name=x"]
    )
    def test_malformed(self, document, override):
        """Malformed overrides are configuration errors."""
        with pytest.raises(ScenarioConfigError):
            apply_overrides(document, [override])


@pytest.mark.parametrize("name", builtin_names())
def test_effective_config_roundtrip(name):
    """The effective configuration parses back to the same scenario."""
    config = parse_scenario(builtin_document(name))
    assert parse_scenario(to_dict(config)) == config
    assert parse_scenario(yaml.safe_load(dump_scenario(config))) == config


def test_load_scenario(tmp_path: Path, document):
    """Files are read as YAML and overridden before validation."""
    path = tmp_path / "scenario.yaml"
    path.write_text(yaml.safe_dump(document), encoding="utf-8")
    config = load_scenario(path, ["os.pic_relocation=true"])
    assert config.name == "binary_exec"
    assert config.os.pic_relocation


def test_load_invalid_yaml(tmp_path: Path):
    """Broken YAML is reported as a configuration error."""
    path = tmp_path / "broken.yaml"
    path.write_text("name: [unclosed", encoding="utf-8")
    with pytest.raises(ScenarioConfigError):
        load_scenario(path)
