import ast
import operator
from typing import Any, Callable, Mapping

from app.exception import ConfigurationError

_BOOL_OPS: dict[type, Callable[[list[Any]], bool]] = {
    ast.And: all,
    ast.Or: any,
}

_UNARY_OPS: dict[type, Callable[[Any], Any]] = {
    ast.Not: operator.not_,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}

_BINARY_OPS: dict[type, Callable[[Any, Any], Any]] = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Mod: operator.mod,
}

_COMPARE_OPS: dict[type, Callable[[Any, Any], bool]] = {
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
    ast.In: lambda x, y: x in y,
    ast.NotIn: lambda x, y: x not in y,
}

_FUNCTIONS: dict[str, Callable[..., Any]] = {"abs": abs}


class Expression:
    """
    A small expression language over node attributes, used by indicator terms and predicates.

    Source text uses Python expression syntax restricted to constants, comparisons, boolean
    and arithmetic operators, tuples/lists of constants, `abs(...)`, bare variable names and
    attribute access on variable names (e.g. `a.role == 'parent' and b.age >= 18`). Nothing
    else is accepted, so evaluating a configured expression never runs arbitrary code.
    """

    source: str
    variables: frozenset[str]
    _tree: ast.Expression

    def __init__(self, source: str, variables: frozenset[str] | set[str]) -> None:
        self.source = source
        self.variables = frozenset(variables)
        try:
            self._tree = ast.parse(source, mode="eval")
        except SyntaxError as e:
            raise ConfigurationError(f"Invalid expression '{source}': {e.msg}")
        self._validate(self._tree.body)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({self.source!r})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Expression):
            return NotImplemented
        return self.source == other.source and self.variables == other.variables

    def __hash__(self) -> int:
        return hash((self.source, self.variables))

    def _fail(self, node: ast.AST) -> ConfigurationError:
        return ConfigurationError(
            f"Unsupported construct '{node.__class__.__name__}' in expression '{self.source}'"
        )

    def _validate(self, node: ast.AST) -> None:
        match node:
            case ast.BoolOp(op=op, values=values) if type(op) in _BOOL_OPS:
                for value in values:
                    self._validate(value)
            case ast.UnaryOp(op=op, operand=operand) if type(op) in _UNARY_OPS:
                self._validate(operand)
            case ast.BinOp(op=op, left=left, right=right) if type(op) in _BINARY_OPS:
                self._validate(left)
                self._validate(right)
            case ast.Compare(left=left, ops=ops, comparators=comparators):
                if not all(type(op) in _COMPARE_OPS for op in ops):
                    raise self._fail(node)
                self._validate(left)
                for comparator in comparators:
                    self._validate(comparator)
            case ast.Constant(value=value) if isinstance(value, (str, int, float, bool)):
                pass
            case ast.Tuple(elts=elts) | ast.List(elts=elts):
                for elt in elts:
                    self._validate(elt)
            case ast.Name(id=name):
                if name not in self.variables:
                    raise ConfigurationError(
                        f"Unknown name '{name}' in expression '{self.source}'; expected one of {sorted(self.variables)}"
                    )
            case ast.Attribute(value=ast.Name(id=name)):
                if name not in self.variables:
                    raise ConfigurationError(
                        f"Unknown name '{name}' in expression '{self.source}'; expected one of {sorted(self.variables)}"
                    )
            case ast.Call(func=ast.Name(id=name), args=args, keywords=[]) if name in _FUNCTIONS:
                for arg in args:
                    self._validate(arg)
            case _:
                raise self._fail(node)

    def attributes(self) -> set[str]:
        """Attribute names accessed on any variable."""
        return {
            node.attr for node in ast.walk(self._tree) if isinstance(node, ast.Attribute)
        }

    def evaluate(self, env: Mapping[str, Any]) -> Any:
        try:
            return self._eval(self._tree.body, env)
        except (ArithmeticError, TypeError, ValueError) as e:
            raise ConfigurationError(
                f"Expression '{self.source}' failed to evaluate: {e}"
            ) from e

    def _eval(self, node: ast.AST, env: Mapping[str, Any]) -> Any:
        match node:
            case ast.BoolOp(op=op, values=values):
                if isinstance(op, ast.And):
                    return all(self._eval(v, env) for v in values)
                return any(self._eval(v, env) for v in values)
            case ast.UnaryOp(op=op, operand=operand):
                return _UNARY_OPS[type(op)](self._eval(operand, env))
            case ast.BinOp(op=op, left=left, right=right):
                return _BINARY_OPS[type(op)](self._eval(left, env), self._eval(right, env))
            case ast.Compare(left=left, ops=ops, comparators=comparators):
                current = self._eval(left, env)
                for op, comparator in zip(ops, comparators):
                    other = self._eval(comparator, env)
                    if not _COMPARE_OPS[type(op)](current, other):
                        return False
                    current = other
                return True
            case ast.Constant(value=value):
                return value
            case ast.Tuple(elts=elts) | ast.List(elts=elts):
                return tuple(self._eval(elt, env) for elt in elts)
            case ast.Name(id=name):
                return env[name]
            case ast.Attribute(value=ast.Name(id=name), attr=attr):
                namespace = env[name]
                if attr not in namespace:
                    raise ConfigurationError(
                        f"Attribute '{attr}' referenced by '{self.source}' does not exist"
                    )
                return namespace[attr]
            case ast.Call(func=ast.Name(id=name), args=args):
                return _FUNCTIONS[name](*(self._eval(arg, env) for arg in args))
        raise self._fail(node)
