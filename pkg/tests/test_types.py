import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fogcoord import codec
from fogcoord.errors import DuplicateNamespace, InvalidDescriptor, NoDescriptor
from fogcoord.types import (
    MEMBERSHIP_DESCRIPTOR,
    CoordinationKey,
    CrdtKind,
    DataTypeDescriptor,
    DescriptorRegistry,
    Level,
    MachineId,
    Participation,
    ReadMode,
    Strategy,
    lookup_descriptor,
    register_descriptor,
)


def strict(ns, level=None, mode=ReadMode.READ_QUORUM):
    return DataTypeDescriptor(ns, Strategy.STRICT, level or Level.system(), read_mode=mode)


def eventual(ns, kind=CrdtKind.LWW_REGISTER):
    return DataTypeDescriptor(ns, Strategy.EVENTUAL, Level.system(), crdt_kind=kind)


def test_register_wildcard_namespace_and_lookup():
    d = DataTypeDescriptor("acl.*", Strategy.STRICT, Level.replica_set("r1"), Participation.all_members(),
                           read_mode=ReadMode.READ_QUORUM)
    reg = register_descriptor(DescriptorRegistry(), d)
    got = lookup_descriptor(reg, CoordinationKey("acl.svc1", "x"))
    assert got.namespace == "acl" and got.level == Level.replica_set("r1")


def test_register_is_persistent():
    empty = DescriptorRegistry()
    reg = empty.register(strict("a"))
    assert len(empty) == 0 and len(reg) == 1


def test_duplicate_namespace():
    reg = DescriptorRegistry().register(strict("a"))
    with pytest.raises(DuplicateNamespace):
        reg.register(eventual("a"))
    with pytest.raises(DuplicateNamespace):
        reg.register(eventual("a.*"))


def test_eventual_with_quorum_reads_is_invalid():
    d = DataTypeDescriptor("x", Strategy.EVENTUAL, Level.system(), crdt_kind=CrdtKind.OR_SET,
                           read_mode=ReadMode.READ_QUORUM)
    with pytest.raises(InvalidDescriptor) as err:
        DescriptorRegistry().register(d)
    assert err.value.field == "read_mode"


def test_crdt_kind_required_exactly_for_eventual():
    with pytest.raises(InvalidDescriptor) as err:
        DataTypeDescriptor("x", Strategy.EVENTUAL, Level.system()).validate()
    assert err.value.field == "crdt_kind"
    with pytest.raises(InvalidDescriptor) as err:
        DataTypeDescriptor("x", Strategy.STRICT, Level.system(), crdt_kind=CrdtKind.LWW_REGISTER).validate()
    assert err.value.field == "crdt_kind"


def test_longest_prefix_lookup():
    reg = DescriptorRegistry().register(strict("a")).register(eventual("a.b"))
    assert reg.lookup(CoordinationKey.parse("a.b.c/x")).namespace == "a.b"
    assert reg.lookup(CoordinationKey.parse("a.bc/x")).namespace == "a"
    with pytest.raises(NoDescriptor):
        DescriptorRegistry().register(strict("a")).lookup(CoordinationKey.parse("z/x"))


def test_root_namespace_matches_everything():
    reg = DescriptorRegistry().register(eventual("*"))
    assert reg.lookup(CoordinationKey.parse("any.thing/x")).namespace == ""


def test_membership_namespace_reserved():
    reg = DescriptorRegistry.bootstrap()
    assert reg.lookup(CoordinationKey.parse("sys.membership.replica_set/r1")) is MEMBERSHIP_DESCRIPTOR
    with pytest.raises(InvalidDescriptor):
        reg.register(strict("sys.membership.extra"))


NAMESPACES = ["a", "a.b", "a.b.c", "b", "c.d", ""]


@given(st.permutations(NAMESPACES), st.sampled_from(["a.b.c.d", "a.x", "b.y", "c.d", "q", "a.b"]))
def test_lookup_independent_of_registration_order(order, key_ns):
    reg = DescriptorRegistry()
    for ns in order:
        reg = reg.register(strict(ns))
    # Oracle: the longest listed namespace that is a dotted prefix of key_ns.
    cands = [ns for ns in NAMESPACES if ns == "" or key_ns == ns or key_ns.startswith(ns + ".")]
    assert reg.lookup(CoordinationKey(key_ns, "k")).namespace == max(cands, key=len)


def test_machine_id_order_and_parse():
    ms = [MachineId("n2", 0), MachineId("n1", 1), MachineId("n1", 0)]
    assert sorted(ms) == [MachineId("n1", 0), MachineId("n1", 1), MachineId("n2", 0)]
    assert MachineId.parse("n1/2") == MachineId("n1", 2)
    assert str(MachineId("n1", 2)) == "n1/2"
    with pytest.raises(ValueError):
        MachineId.parse("n1")


def test_level_and_participation_validation():
    assert Level.replica_set("r1").scope_id == "rs:r1"
    assert Level.node("n3").scope_id == "node:n3"
    with pytest.raises(ValueError):
        Level("replica_set")
    with pytest.raises(ValueError):
        Participation("subset")
    with pytest.raises(ValueError):
        Participation("all", pinned=True)


def test_group_id():
    assert strict("cfg", Level.replica_set("r9")).group_id == "cfg@rs:r9"


# -- canonical codec ------------------------------------------------------------------

values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.binary(max_size=8) | st.text(max_size=8),
    lambda inner: st.lists(inner, max_size=4).map(tuple) | st.frozensets(st.integers() | st.text(max_size=4),
                                                                           max_size=4)
    | st.dictionaries(st.text(max_size=4), inner, max_size=4),
    max_leaves=12,
)


@given(values)
def test_codec_roundtrip(v):
    assert codec.decode(codec.encode(v)) == v


@given(st.frozensets(st.integers(), max_size=6))
def test_codec_set_encoding_is_order_free(s):
    items = sorted(s)
    a = codec.encode(frozenset(items))
    b = codec.encode(frozenset(reversed(items)))
    assert a == b


def test_codec_known_bytes():
    # Hand-computed: tag 0x03, zigzag(-1)=1, zigzag(2)=4; tag 0x05 len 2 "hi".
    assert codec.encode(-1) == bytes([0x03, 0x01])
    assert codec.encode(2) == bytes([0x03, 0x04])
    assert codec.encode("hi") == bytes([0x05, 0x02]) + b"hi"
    assert codec.encode(300) == bytes([0x03, 0xD8, 0x04])  # 600 = 0b100_1011000


def test_codec_dict_order_free():
    a = dict(itertools.islice(((str(i), i) for i in range(5)), 5))
    b = dict(reversed(list(a.items())))
    assert codec.encode(a) == codec.encode(b)
