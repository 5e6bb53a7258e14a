"""Command-line front door: validate/plan/export workspaces, replay against a
server, run the server, and quick FK queries."""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .chain import KinematicChain, UrdfError, forward_kinematics, parse_urdf
from .client import ConnectionClosed, ServerError, WorkbenchClient
from .planner import (
    PlannerParams,
    PlanningError,
    keypoint_position_errors,
    plan_ilqr,
    trajectory_to_csv,
)
from .server import ServerConfig, WorkbenchServer
from .workspace import Workspace, WorkspaceError, load_workspace, save_workspace

DEFAULT_ADDRESS = "127.0.0.1:7401"
ADDRESS_ENV_VAR = "ROBOT_WORKBENCH_ADDRESS"


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = 1):
        super().__init__(message)
        self.exit_code = exit_code


def _fmt(value: float) -> str:
    return f"{value:.12g}"


def _parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise CliError(f"bad address {text!r}, expected host:port")
    return host or "127.0.0.1", int(port)


def _default_address() -> str:
    return os.environ.get(ADDRESS_ENV_VAR, DEFAULT_ADDRESS)


def _load_workspace_file(path: str) -> Workspace:
    try:
        return load_workspace(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    except WorkspaceError as exc:
        raise CliError(f"invalid workspace {path}: {exc}") from exc


def _chain_for_workspace(ws: Workspace, workspace_path: str) -> KinematicChain:
    robot = ws.robot
    if robot.urdf_text is not None:
        document = robot.urdf_text
    elif robot.urdf_path is not None:
        urdf_file = Path(workspace_path).parent / robot.urdf_path
        try:
            document = urdf_file.read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read robot description {urdf_file}: {exc}") from exc
    else:
        raise CliError("workspace has no robot description (urdf_text or urdf_path)")
    try:
        chain = parse_urdf(document)
    except UrdfError as exc:
        raise CliError(f"bad robot description: {exc}") from exc
    if robot.tool_offset is not None:
        chain = chain.with_tool_offset(robot.tool_offset)
    return chain


def _atomic_write(path: str, text: str):
    directory = Path(path).resolve().parent
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-workspace-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise


# -- subcommands --------------------------------------------------------------


def cmd_fk(args) -> int:
    try:
        chain = parse_urdf(Path(args.urdf).read_text(encoding="utf-8"))
    except (OSError, UrdfError) as exc:
        raise CliError(f"cannot load {args.urdf}: {exc}") from exc
    if len(args.q) != chain.dof:
        raise CliError(f"expected {chain.dof} joint values, got {len(args.q)}")
    pose = forward_kinematics(chain, np.array(args.q))
    translation = " ".join(_fmt(v) for v in pose.translation)
    rotation = " ".join(_fmt(v) for v in pose.rotation)
    print(f"{translation} | {rotation}")
    return 0


def cmd_validate(args) -> int:
    try:
        ws = _load_workspace_file(args.workspace)
    except CliError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    problems = []
    if ws.robot.urdf_text is not None or ws.robot.urdf_path is not None:
        try:
            chain = _chain_for_workspace(ws, args.workspace)
            for name, traj in ws.trajectories.items():
                if traj.dof != chain.dof:
                    problems.append(f"trajectory {name!r}: dof {traj.dof} != robot dof {chain.dof}")
                elif np.any(traj.configs < chain.lower_limits - 1e-9) or np.any(
                    traj.configs > chain.upper_limits + 1e-9
                ):
                    problems.append(f"trajectory {name!r}: configurations violate joint limits")
        except CliError as exc:
            problems.append(str(exc))
    for problem in problems:
        print(f"invalid: {problem}", file=sys.stderr)
    if problems:
        return 1
    print(f"{args.workspace}: ok ({len(ws.objects)} objects, {len(ws.keypoints)} keypoints, "
          f"{len(ws.trajectories)} trajectories)")
    return 0


def cmd_plan(args) -> int:
    ws = _load_workspace_file(args.workspace)
    if not ws.keypoints:
        raise CliError("no keypoints in workspace")
    chain = _chain_for_workspace(ws, args.workspace)
    params = PlannerParams(
        horizon=args.horizon,
        dt=args.dt,
        control_cost=args.control_cost,
        max_iterations=args.max_iterations,
        cost_tolerance=args.cost_tolerance,
    )
    if len(ws.keypoints) > params.horizon:
        raise CliError(f"more keypoints than horizon steps (K > T: {len(ws.keypoints)} > {params.horizon})")
    q0 = np.array(args.start) if args.start else chain.clamp(np.zeros(chain.dof))
    if len(q0) != chain.dof:
        raise CliError(f"--start needs {chain.dof} values")
    try:
        result = plan_ilqr(chain, q0, ws.keypoints, params)
    except (PlanningError, ValueError) as exc:
        raise CliError(f"planning failed: {exc}") from exc
    from dataclasses import replace

    ws = replace(ws, trajectories={**ws.trajectories, args.out: result.trajectory})
    _atomic_write(args.workspace, save_workspace(ws))
    print(f"final cost {_fmt(result.cost)} after {result.iterations} iterations")
    for k, err in sorted(keypoint_position_errors(chain, result.trajectory, ws.keypoints).items()):
        print(f"keypoint {k}: position error {_fmt(err)} m")
    return 0


def cmd_export(args) -> int:
    ws = _load_workspace_file(args.workspace)
    if args.trajectory not in ws.trajectories:
        raise CliError(f"no trajectory named {args.trajectory!r} in workspace")
    csv_text = trajectory_to_csv(ws.trajectories[args.trajectory])
    Path(args.csv).write_text(csv_text, encoding="utf-8")
    print(f"wrote {args.csv}")
    return 0


def cmd_replay(args) -> int:
    ws = _load_workspace_file(args.workspace)
    if args.trajectory not in ws.trajectories:
        raise CliError(f"no trajectory named {args.trajectory!r} in workspace")
    trajectory = ws.trajectories[args.trajectory]
    host, port = _parse_address(args.address)
    try:
        client = WorkbenchClient(host, port, name="replay")
    except OSError as exc:
        raise CliError(f"cannot reach server at {args.address}: {exc}", exit_code=2) from exc
    with client:
        try:
            client.hello()
            client.request("set_workspace", document=save_workspace(ws))
            start = list(trajectory.configs[0])
            client.request("set_joint_target", q=start)
            client.wait_converged(start, timeout=args.timeout)
            client.request("execute_trajectory", name=args.trajectory)
            done = client.wait_execution_done(args.trajectory, timeout=args.timeout)
        except (ServerError, ConnectionClosed, TimeoutError) as exc:
            raise CliError(f"execution failed: {exc}", exit_code=3) from exc
    if not done.get("success"):
        raise CliError("execution finished unsuccessfully", exit_code=3)
    print(f"executed {args.trajectory!r} to completion")
    return 0


def cmd_serve(args) -> int:
    host, port = _parse_address(args.address)
    try:
        chain = parse_urdf(Path(args.urdf).read_text(encoding="utf-8"))
    except (OSError, UrdfError) as exc:
        raise CliError(f"cannot load {args.urdf}: {exc}") from exc
    workspace = None
    if args.workspace:
        workspace = _load_workspace_file(args.workspace)
    config = ServerConfig(
        host=host,
        port=port,
        tick_rate=args.tick_rate,
        state_rate=args.state_rate,
        realtime=not args.no_realtime,
        robot_name=args.robot_name,
    )
    server = WorkbenchServer(chain, config, workspace)
    server.start()
    print(f"serving on {server.address[0]}:{server.address[1]} "
          f"(tick {config.tick_rate} Hz, state {config.state_rate} Hz)")
    try:
        server.serve_forever()
    finally:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robot-workbench",
        description="Virtual robot programming workbench.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fk", help="print the tool pose for a configuration")
    p.add_argument("urdf")
    p.add_argument("q", nargs="+", type=float)
    p.set_defaults(func=cmd_fk)

    p = sub.add_parser("validate", help="check a workspace file")
    p.add_argument("workspace")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plan", help="plan a trajectory through the workspace keypoints")
    p.add_argument("workspace")
    p.add_argument("--out", default="plan", help="trajectory name to store")
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--dt", type=float, default=0.02)
    p.add_argument("--control-cost", type=float, default=1e-4)
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--cost-tolerance", type=float, default=1e-8)
    p.add_argument("--start", nargs="*", type=float, help="initial configuration")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("export", help="export a trajectory as CSV")
    p.add_argument("workspace")
    p.add_argument("trajectory")
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("replay", help="execute a stored trajectory on a server")
    p.add_argument("workspace")
    p.add_argument("trajectory")
    p.add_argument("--address", default=_default_address())
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="run the simulated robot server")
    p.add_argument("--urdf", required=True)
    p.add_argument("--workspace")
    p.add_argument("--address", default=_default_address())
    p.add_argument("--tick-rate", type=float, default=500.0)
    p.add_argument("--state-rate", type=float, default=50.0)
    p.add_argument("--robot-name", default="sim-arm")
    p.add_argument("--no-realtime", action="store_true",
                   help="run the simulation loop as fast as possible")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
