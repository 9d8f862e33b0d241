import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from soundgnn.datalog import (Atom, Inequality, Rule, Signature, constants, fact, format_rule, is_variable,
                              iterate, parse_program, parse_rule, program_consequences, read_dataset,
                              read_rules, rule_consequences, satisfies, write_dataset, write_rules)
from soundgnn.errors import ArityError, RuleSafetyError, RuleSyntaxError, SignatureError, ValidationError

from strategies import random_dataset


class TestTerms:
    @pytest.mark.parametrize("term", ["x", "y", "z", "w", "x1", "w42"])
    def test_variables(self, term):
        assert is_variable(term)

    @pytest.mark.parametrize("term", ["a", "c1", "v", "xa", "X", "x_1", "e012"])
    def test_constants(self, term):
        assert not is_variable(term)

    def test_fact_must_be_ground(self):
        with pytest.raises(ValidationError):
            fact("R", "a", "x")

    def test_only_unary_and_binary(self):
        with pytest.raises(ArityError):
            Atom("R", ("a", "b", "c"))


class TestSignature:
    def test_duplicate_names_rejected(self):
        with pytest.raises(SignatureError):
            Signature(("A",), ("A",))

    def test_from_facts_sorts_names(self):
        sig = Signature.from_facts([fact("S", "a", "b"), fact("B", "a"), fact("R", "b", "a"), fact("A", "c")])
        assert sig.unary_predicates == ("A", "B")
        assert sig.binary_predicates == ("R", "S")

    def test_from_facts_rejects_mixed_arity(self):
        with pytest.raises(ArityError):
            Signature.from_facts([fact("R", "a"), fact("R", "a", "b")])

    def test_json_round_trip(self):
        sig = Signature(("U", "V"), ("R",))
        assert Signature.from_json(sig.to_json()) == sig


class TestParsing:
    def test_basic_rule(self):
        r = parse_rule("R(x,y), S(y,z) -> T(x,z)")
        assert r.head == Atom("T", ("x", "z"))
        assert r.body == (Atom("R", ("x", "y")), Atom("S", ("y", "z")))

    def test_inequality(self):
        r = parse_rule("R(x,y), x != y -> S(x,y)")
        assert r.inequalities == (Inequality("x", "y"),)

    def test_constants_in_rules(self):
        r = parse_rule("R(x,b) -> U(x)")
        assert r.body_atoms[0].args == ("x", "b")

    def test_hyphenated_predicate(self):
        r = parse_rule("part-of(x,y) -> has-part(y,x)")
        assert r.head.predicate == "has-part"

    @pytest.mark.parametrize("text,pos", [
        ("R(x,y) S(x,y)", 7),
        ("R(x,y) -> ", 10),
        ("R(x y) -> S(x,y)", 4),
        ("R(x,y) -> S(x,y) extra", 17),
        ("R(x,y) -> S(x,y)$", 16),
    ])
    def test_syntax_errors_report_position(self, text, pos):
        with pytest.raises(RuleSyntaxError) as info:
            parse_rule(text)
        assert info.value.position == pos

    def test_unsafe_head_variable(self):
        with pytest.raises(RuleSafetyError):
            parse_rule("R(z,z) -> S(x,y)")

    def test_inequality_only_variable(self):
        with pytest.raises(RuleSafetyError):
            parse_rule("R(x,y), x != z -> S(x,y)")

    def test_vacuous_inequality(self):
        with pytest.raises(RuleSafetyError):
            parse_rule("R(x,y), x != x -> S(x,y)")

    def test_arity_inconsistency(self):
        with pytest.raises(ArityError):
            parse_rule("R(x,y), R(x) -> S(x,y)")

    def test_signature_check(self):
        sig = Signature(("U",), ("R",))
        with pytest.raises(SignatureError):
            parse_rule("Q(x,y) -> R(x,y)", sig)
        with pytest.raises(ArityError):
            parse_rule("U(x,y) -> R(x,y)", sig)

    def test_program_with_comments(self):
        rules = parse_program("# header\nR(x,y) -> S(x,y)  # hier\n\nS(x,y) -> S(y,x)\n")
        assert [format_rule(r) for r in rules] == ["R(x,y) -> S(x,y)", "S(x,y) -> S(y,x)"]

    def test_program_error_names_line(self):
        with pytest.raises(RuleSyntaxError, match="line 2"):
            parse_program("R(x,y) -> S(x,y)\nR(x,y) ->\n")

    @given(st.lists(st.tuples(st.sampled_from(["R", "S", "T"]), st.sampled_from(["x", "y", "z", "a"]),
                              st.sampled_from(["x", "y", "z", "b"])), min_size=1, max_size=3))
    def test_format_parse_round_trip(self, body):
        atoms = tuple(Atom(p, (s, o)) for p, s, o in body)
        head_var = next(t for a in atoms for t in a.args if is_variable(t)) if any(
            is_variable(t) for a in atoms for t in a.args) else "c"
        r = Rule(atoms, Atom("H", (head_var,)))
        assert parse_rule(format_rule(r)) == r


def brute_force_consequences(r: Rule, d):
    """Try every assignment of the dataset's constants to the rule's variables."""
    consts = constants(d) or ["_"]
    out = set()
    vs = r.variables
    for image in itertools.product(consts, repeat=len(vs)):
        nu = dict(zip(vs, image))
        if all(satisfies(d, lit.substitute(nu)) for lit in r.body):
            out.add(r.head.substitute(nu))
    return frozenset(out)


class TestConsequences:
    def test_hierarchy(self):
        d = frozenset({fact("R", "a", "b")})
        assert rule_consequences(parse_rule("R(x,y) -> S(x,y)"), d) == {fact("S", "a", "b")}

    def test_inequality_blocks_reflexive(self):
        r = parse_rule("R(x,y), x != y -> S(x,y)")
        d = frozenset({fact("R", "a", "a"), fact("R", "a", "b")})
        assert rule_consequences(r, d) == {fact("S", "a", "b")}

    def test_constant_in_body(self):
        r = parse_rule("R(x,b) -> U(x)")
        d = frozenset({fact("R", "a", "b"), fact("R", "c", "d")})
        assert rule_consequences(r, d) == {fact("U", "a")}

    def test_repeated_variable(self):
        r = parse_rule("R(x,x) -> U(x)")
        d = frozenset({fact("R", "a", "a"), fact("R", "a", "b")})
        assert rule_consequences(r, d) == {fact("U", "a")}

    def test_program_is_union(self):
        p = parse_program("R(x,y) -> S(x,y)\nR(x,y) -> S(y,x)")
        d = frozenset({fact("R", "a", "b")})
        assert program_consequences(p, d) == {fact("S", "a", "b"), fact("S", "b", "a")}

    def test_iterate(self):
        r = parse_rule("R(x,y) -> R(y,x)")
        d = frozenset({fact("R", "a", "b")})
        assert iterate(lambda s: rule_consequences(r, s), d, 2) == d

    def test_iterate_needs_positive_k(self):
        with pytest.raises(ValueError):
            iterate(lambda s: s, frozenset(), 0)

    def test_satisfies_rejects_variables(self):
        with pytest.raises(ValidationError):
            satisfies(frozenset(), Atom("R", ("x", "a")))

    @pytest.mark.parametrize("text", [
        "R(x,y) -> S(x,y)",
        "R(x,y), S(y,z) -> T(x,z)",
        "R(x,y), R(y,x), x != y -> U(x)",
        "U(x), R(x,y), V(y) -> S(y,x)",
        "R(x,y), S(y,z), T(w,x) -> R(x,y)",
        "R(x,x), U(y) -> S(x,y)",
    ])
    def test_join_matches_brute_force(self, text):
        r = parse_rule(text)
        sig = Signature(("U", "V"), ("R", "S", "T"))
        rng = np.random.default_rng(len(text))
        for _ in range(30):
            d = random_dataset(rng, sig, n_constants=4)
            assert rule_consequences(r, d) == brute_force_consequences(r, d)


class TestFiles:
    def test_dataset_round_trip(self, tmp_path):
        d = frozenset({fact("R", "a", "b"), fact("U", "c"), fact("has part", "e1", "b")})
        path = tmp_path / "d.tsv"
        write_dataset(path, d)
        assert read_dataset(path) == d

    def test_bad_dataset_line(self, tmp_path):
        path = tmp_path / "d.tsv"
        path.write_text("R\ta\tb\tc\n")
        with pytest.raises(ValidationError, match=":1:"):
            read_dataset(path)

    def test_rules_round_trip(self, tmp_path):
        rules = parse_program("R(x,y) -> S(x,y)\nR(x,y), x != y -> U(x)")
        path = tmp_path / "r.dlog"
        write_rules(path, rules, header="two rules")
        assert read_rules(path) == rules
