"""Exception hierarchy shared by all modules."""


class FscxError(Exception):
    """Base class. ``module`` names the subsystem for CLI error attribution."""

    module = "fscx"


class ModelFormatError(FscxError):
    module = "model"

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        loc = ""
        if path is not None:
            loc += f"{path}:"
        if line is not None:
            loc += f"{line}:"
        super().__init__(f"{loc} {message}".strip() if loc else message)


class ValidationError(FscxError):
    module = "model"


class IllegalActionSupport(FscxError):
    module = "verify"

    def __init__(self, state, node, action, prob):
        self.state, self.node, self.action, self.prob = state, node, action, prob
        super().__init__(
            f"controller plays illegal action a={action} in state s={state} "
            f"at node n={node} with probability {prob:.3g}"
        )


class UndefinedControllerRow(FscxError):
    module = "verify"

    def __init__(self, node, observation):
        self.node, self.observation = node, observation
        super().__init__(f"controller has no distribution for (n={node}, z={observation})")


class GoalNotAlmostSure(FscxError):
    module = "verify"

    def __init__(self, prob):
        self.prob = prob
        super().__init__(f"goal is reached with probability {prob:.12g} < 1; reward objective undefined")


class NonConvergence(FscxError):
    module = "verify"

    def __init__(self, residual, iterations):
        self.residual, self.iterations = residual, iterations
        super().__init__(f"value iteration stopped after {iterations} sweeps with residual {residual:.3g}")


class NonFiniteError(FscxError):
    module = "policy"


class MemberError(FscxError):
    """Wraps a failure while evaluating one member of a family."""

    module = "verify"

    def __init__(self, index, cause):
        self.index, self.cause = index, cause
        super().__init__(f"member {index}: {cause}")
