"""Plan emitters: readable plan text, BLAS-style calls and the JSON IR."""
from app.core.errors import MissingTemplate
from app.models.expr import Property, UnaryMod
from app.models.schemas import CallOperandIR, KernelCallIR, OperandIR, PlanIR
from app.services.costs import CostValue, plain_number
from app.services.kernels import template_slots
from app.services.properties import make_operand
from app.services.solver import CallOperand, KernelCall, Plan


_MODS_BY_SUFFIX = {mod.source_suffix: mod for mod in UnaryMod}


def emit_text_plan(plan: Plan) -> str:
    lines = [
        f"{call.output} := {call.expression}   # {call.kernel}, cost={call.cost}"
        for call in plan.calls
    ]
    lines.append(f"# {plan.target} computed with cost {plan.total_cost}")
    return "\n".join(lines) + "\n"


def _needs_buffer(buffers: dict[str, str], names, buffer: str) -> bool:
    return any(buffers.get(name) == buffer for name in names if name in buffers)


def emit_blas_calls(plan: Plan) -> str:
    """Instantiate each call's template.

    Templates without ``{OUT}`` write their result into the Y buffer. The
    result then lives under the buffer's name, and a copy is made first when
    that buffer is still read afterwards. A transposed Y is materialized when
    the template cannot express it.
    """
    buffers = {operand.name: operand.name for operand in plan.operands}
    lines = []
    for index, call in enumerate(plan.calls):
        if call.template is None:
            raise MissingTemplate(f"kernel {call.kernel} has no call template")
        slots = {role: buffers.get(name, name) for role, name in call.roles.items()}
        flags = dict(call.flags)
        note = f"{call.output} := {call.expression}"

        if call.overwrites is None:
            buffers[call.output] = call.output
        else:
            buffer = slots["Y"]
            later = {name for c in plan.calls[index + 1 :] for name in c.inputs}
            if flags.get("transY") == "T" and "transY" not in template_slots(call.template):
                lines.append(f"{call.output} = transpose({buffer})")
                buffer = call.output
            elif _needs_buffer(buffers, later | {call.roles["X"]}, buffer):
                lines.append(f"{call.output} = copy({buffer})")
                buffer = call.output
            slots["Y"] = buffer
            buffers[call.output] = buffer
            if buffer != call.output:
                note += f", overwrites {buffer}"

        text = call.template.format(OUT=call.output, **slots, **flags)
        lines.append(f"{text}    # {note}")

    final = buffers.get(plan.result, plan.result)
    if final != plan.result:
        lines.append(f"{plan.result} = {final}")
    return "\n".join(lines) + "\n"


def _cost_values(cost: CostValue) -> list:
    return [plain_number(value) for value in cost.values]


def plan_to_ir(plan: Plan) -> PlanIR:
    return PlanIR(
        target=plan.target,
        result=plan.result,
        total_cost=_cost_values(plan.total_cost),
        operands=[
            OperandIR(
                name=op.name,
                rows=op.shape.rows,
                cols=op.shape.cols,
                properties=[p.value for p in Property if p in op.properties],
            )
            for op in plan.operands
        ],
        calls=[
            KernelCallIR(
                kernel=call.kernel,
                routine=call.routine,
                pattern=call.pattern,
                inputs=[
                    CallOperandIR(name=operand.name, mod=operand.mod.source_suffix)
                    for operand in (call.left, call.right)
                ],
                output=call.output,
                rows=call.rows,
                cols=call.cols,
                roles=dict(call.roles),
                flags=dict(call.flags),
                cost=_cost_values(call.cost),
                overwrites=call.overwrites,
                template=call.template,
            )
            for call in plan.calls
        ],
    )


def plan_from_ir(document: PlanIR) -> Plan:
    calls = []
    for record in document.calls:
        left, right = (
            CallOperand(item.name, _MODS_BY_SUFFIX[item.mod]) for item in record.inputs
        )
        calls.append(
            KernelCall(
                kernel=record.kernel,
                routine=record.routine,
                pattern=record.pattern,
                left=left,
                right=right,
                output=record.output,
                rows=record.rows,
                cols=record.cols,
                roles=record.roles,
                flags=record.flags,
                cost=CostValue(record.cost),
                overwrites=record.overwrites,
                template=record.template,
            )
        )
    operands = tuple(
        make_operand(op.name, op.rows, op.cols, [Property(p) for p in op.properties])
        for op in document.operands
    )
    return Plan(
        target=document.target,
        calls=tuple(calls),
        total_cost=CostValue(document.total_cost),
        result=document.result,
        operands=operands,
    )


def emit_ir(plan: Plan) -> str:
    return plan_to_ir(plan).model_dump_json(indent=2) + "\n"


def parse_ir(text: str) -> Plan:
    return plan_from_ir(PlanIR.model_validate_json(text))


EMITTERS = {
    "text": emit_text_plan,
    "blas": emit_blas_calls,
    "ir": emit_ir,
}
