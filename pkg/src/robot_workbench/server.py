"""Simulated robot server: impedance-tracked joints, trajectory execution,
state streaming, and command handling over the line-delimited JSON protocol.

A single RobotSession owns all mutable robot/workspace state and is advanced
tick by tick from one thread; the TCP layer only shuttles messages in and out.
"""

from __future__ import annotations

import math
import socket
import threading
import time
from dataclasses import dataclass, field, replace
from queue import Empty, Queue
from typing import Optional

import numpy as np

from . import protocol
from .chain import KinematicChain, frame_poses
from .control import (
    DEFAULT_MAX_STEP,
    ImpedanceGains,
    JointJog,
    PlaneMotion,
    RotateRing,
    TranslateAxis,
    impedance_step,
    joint_jog,
    project_to_plane,
    solve_ik,
    weighted_ik_step,
    IkError,
    IkWeights,
)
from .planner import JointTrajectory, PlannerParams, PlanningError, replan_incremental, task_path
from .transforms import RigidTransform, compose, quat_from_axis_angle, quat_mul
from .workspace import (
    Workspace,
    WorkspaceFormatError,
    apply_gripper_action,
    load_workspace,
    save_workspace,
    track_attached_object,
)

BROADCAST = "*"

MODE_IDLE = "idle"
MODE_JOGGING = "jogging"
MODE_EXECUTING = "executing"
MODE_SAFETY_STOP = "safety_stop"

LIMIT_TOLERANCE = 1e-9
SAFETY_LIMIT_SLACK = 1e-6
MAX_TARGET_JUMP = 0.5  # rad, per tick of commanded-target stream
CONVERGENCE_TOL = 1e-3
EXECUTION_SETTLE_TIMEOUT = 5.0  # sim seconds past the last step

MOTION_TYPES = ("set_joint_target", "jog", "execute_trajectory", "gripper")
SAFETY_EXEMPT_TYPES = ("reset", "get_workspace", "hello")


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 7401
    tick_rate: float = 500.0
    state_rate: float = 50.0
    realtime: bool = True
    robot_name: str = "sim-arm"

    def __post_init__(self):
        if self.tick_rate <= 0 or self.state_rate <= 0:
            raise ValueError("tick and state rates must be > 0")
        if self.state_rate > self.tick_rate:
            raise ValueError("state rate cannot exceed tick rate")


@dataclass
class _Execution:
    trajectory: JointTrajectory
    name: str
    actions: dict[int, str]
    requester: str
    started_at: Optional[float] = None
    next_step: int = 0
    pending_action: Optional[str] = None
    paused_at: Optional[float] = None


@dataclass
class _PlanRequest:
    name: str
    params: PlannerParams
    q0: np.ndarray
    workspace: Workspace
    warm_start: Optional[JointTrajectory]
    requester: str
    ref: object
    seq: int


class RobotSession:
    """Authoritative simulated robot. Single-threaded: handle() and tick()
    must be called from the owning loop; outputs accumulate in `outbox` as
    (destination, message) pairs, destination BROADCAST or a client key.
    """

    def __init__(
        self,
        chain: KinematicChain,
        workspace: Optional[Workspace] = None,
        q0: Optional[np.ndarray] = None,
        gains: Optional[ImpedanceGains] = None,
        tick_rate: float = 500.0,
        state_rate: float = 50.0,
        robot_name: str = "sim-arm",
    ):
        self.chain = chain
        self.workspace = workspace if workspace is not None else Workspace()
        if self.workspace.robot.tool_offset is not None:
            self.chain = chain.with_tool_offset(self.workspace.robot.tool_offset)
        self.q = chain.clamp(np.zeros(chain.dof) if q0 is None else np.asarray(q0, dtype=float))
        self.dq = np.zeros(chain.dof)
        self.target = self.q.copy()
        self.gains = gains or ImpedanceGains.critically_damped(100.0, chain.dof)
        self.mode = MODE_IDLE
        self.sim_time = 0.0
        self.tick_dt = 1.0 / tick_rate
        self._state_every = max(1, round(tick_rate / state_rate))
        self._tick_count = 0
        self.robot_name = robot_name
        self.outbox: list[tuple[str, dict]] = []
        self.operator: Optional[str] = None
        self.clients: list[str] = []
        self._execution: Optional[_Execution] = None
        self.pending_plans: list[_PlanRequest] = []
        self._plan_seq: dict[str, int] = {}
        self._plan_id = 0
        self.ik_weights = IkWeights()

    # -- helpers ---------------------------------------------------------

    def _emit(self, dest: str, msg: dict):
        self.outbox.append((dest, msg))

    def drain_outbox(self) -> list[tuple[str, dict]]:
        out, self.outbox = self.outbox, []
        return out

    def _ack(self, client: str, ref, **extra):
        self._emit(client, protocol.ack(ref, **extra))

    def _error(self, client: str, ref, code: str, text: str):
        self._emit(client, protocol.error(ref, code, text))

    def _enter_safety_stop(self, reason: str):
        self.mode = MODE_SAFETY_STOP
        self.target = self.q.copy()
        self.dq = np.zeros_like(self.dq)
        if self._execution is not None:
            self._emit(
                BROADCAST,
                {"type": "execution_done", "name": self._execution.name, "success": False},
            )
            self._execution = None
        self._emit(BROADCAST, protocol.error(None, "safety_stop", reason))

    def _check_target_jump(self, new_target: np.ndarray, what: str) -> bool:
        jump = float(np.max(np.abs(new_target - self.target)))
        if jump > MAX_TARGET_JUMP:
            self._enter_safety_stop(f"{what} jumped {jump:.3f} rad (> {MAX_TARGET_JUMP})")
            return False
        return True

    def _set_target(self, new_target: np.ndarray, mode: str):
        self.target = self.chain.clamp(np.asarray(new_target, dtype=float))
        self.mode = mode

    # -- message handling --------------------------------------------------

    def handle(self, client: str, msg: dict):
        ref = msg.get("id")
        mtype = msg.get("type")
        if not isinstance(mtype, str):
            self._error(client, ref, "bad_request", "missing message type")
            return
        if mtype not in protocol.CLIENT_TYPES:
            self._error(client, ref, "bad_request", f"unknown message type {mtype!r}")
            return
        if self.mode == MODE_SAFETY_STOP and mtype not in SAFETY_EXEMPT_TYPES:
            self._error(client, ref, "stopped", "robot is in safety stop; send reset")
            return
        if mtype != "hello" and mtype not in ("get_workspace",) and not self._is_operator(client):
            self._error(client, ref, "not_operator", "another client holds the operator role")
            return
        try:
            getattr(self, f"_on_{mtype}")(client, ref, msg)
        except Exception as exc:  # defensive: a handler bug must not kill the loop
            self._error(client, ref, "internal", f"{type(exc).__name__}: {exc}")

    def _is_operator(self, client: str) -> bool:
        if self.operator is None:
            return False
        return self.operator == client

    def client_connected(self, client: str):
        if client not in self.clients:
            self.clients.append(client)

    def client_disconnected(self, client: str):
        if client in self.clients:
            self.clients.remove(client)
        if self.operator == client:
            self.operator = None

    def _on_hello(self, client, ref, msg):
        self.client_connected(client)
        if self.operator is None:
            self.operator = client
        self._emit(
            client,
            {
                "type": "welcome",
                "robot_name": self.robot_name,
                "dof": self.chain.dof,
                "protocol_version": protocol.PROTOCOL_VERSION,
            },
        )
        self._ack(client, ref, operator=self._is_operator(client))

    def _on_get_workspace(self, client, ref, msg):
        self._ack(client, ref, workspace=save_workspace(self.workspace))

    def _on_set_workspace(self, client, ref, msg):
        document = msg.get("document")
        if not isinstance(document, str):
            self._error(client, ref, "bad_request", "set_workspace needs a 'document' string")
            return
        try:
            ws = load_workspace(document)
        except WorkspaceFormatError as exc:
            self._error(client, ref, "bad_request", str(exc))
            return
        self.workspace = ws
        if ws.robot.tool_offset is not None:
            self.chain = self.chain.with_tool_offset(ws.robot.tool_offset)
        self._ack(client, ref)

    def _parse_q(self, msg, key="q") -> Optional[np.ndarray]:
        q = msg.get(key)
        if not isinstance(q, list) or len(q) != self.chain.dof:
            return None
        try:
            arr = np.array([float(v) for v in q])
        except (TypeError, ValueError):
            return None
        if not np.all(np.isfinite(arr)):
            return None
        return arr

    def _on_set_joint_target(self, client, ref, msg):
        q = self._parse_q(msg)
        if q is None:
            self._error(client, ref, "bad_request", f"'q' must be {self.chain.dof} finite numbers")
            return
        if self.mode == MODE_EXECUTING:
            self._error(client, ref, "busy", "trajectory executing; send stop first")
            return
        below = q < self.chain.lower_limits - LIMIT_TOLERANCE
        above = q > self.chain.upper_limits + LIMIT_TOLERANCE
        if np.any(below | above):
            joint = int(np.argmax(below | above))
            self._error(client, ref, "limits", f"target violates limits at joint {joint}")
            return
        self._set_target(q, MODE_JOGGING)
        self._ack(client, ref)

    def _on_jog(self, client, ref, msg):
        if self.mode == MODE_EXECUTING:
            self._error(client, ref, "busy", "trajectory executing; send stop first")
            return
        mode_name = msg.get("mode")
        payload = msg.get("payload") or {}
        if not isinstance(payload, dict):
            self._error(client, ref, "bad_request", "jog payload must be an object")
            return
        try:
            q_new = self._jog_target(mode_name, payload)
        except (KeyError, TypeError, ValueError) as exc:
            self._error(client, ref, "bad_request", f"bad jog request: {exc}")
            return
        if not self._check_target_jump(q_new, "jog target"):
            self._error(client, ref, "safety_stop", "jog rejected: commanded jump too large")
            return
        self._set_target(q_new, MODE_JOGGING)
        self._ack(client, ref)

    def _jog_target(self, mode_name, payload) -> np.ndarray:
        from .chain import forward_kinematics

        q = self.q
        if mode_name == "joint_jog":
            jog = JointJog(int(payload["joint"]), bool(payload.get("nullspace", True)))
            dq = joint_jog(self.chain, q, jog.joint, float(payload["delta"]), jog.nullspace)
            return q + dq
        current = forward_kinematics(self.chain, q)
        if mode_name == "translate_axis":
            axis = TranslateAxis(int(payload["axis"])).axis
            offset = np.zeros(3)
            offset[axis] = float(payload["distance"])
            target = RigidTransform(current.translation + offset, current.rotation)
        elif mode_name == "rotate_ring":
            axis_index = RotateRing(int(payload["axis"])).axis
            axis = np.zeros(3)
            axis[axis_index] = 1.0
            spin = quat_from_axis_angle(axis, float(payload["angle"]))
            target = RigidTransform(current.translation, quat_mul(spin, current.rotation))
        elif mode_name == "plane":
            normal = PlaneMotion(np.asarray(payload["normal"], dtype=float)).normal
            delta = np.asarray(payload["delta"], dtype=float)
            if delta.shape != (3,) or not np.all(np.isfinite(delta)):
                raise ValueError("plane jog needs a finite 3-vector 'delta'")
            target = RigidTransform(
                current.translation + project_to_plane(delta, normal), current.rotation
            )
        else:
            raise ValueError(f"unknown jog mode {mode_name!r}")
        try:
            return solve_ik(self.chain, q, target, self.ik_weights, tol=1e-6, max_iter=20)
        except IkError as exc:
            return exc.best_q

    def _on_execute_trajectory(self, client, ref, msg):
        if self._execution is not None:
            self._error(client, ref, "busy", "already executing a trajectory")
            return
        name = msg.get("name")
        actions: dict[int, str] = {}
        if isinstance(name, str):
            traj = self.workspace.trajectories.get(name)
            if traj is None:
                self._error(client, ref, "not_found", f"no trajectory named {name!r}")
                return
            for k, step in traj.keypoint_indices.items():
                if 0 <= k < len(self.workspace.keypoints):
                    action = self.workspace.keypoints[k].gripper_action
                    if action != "none":
                        actions[step] = action
        elif isinstance(msg.get("trajectory"), dict):
            tdoc = msg["trajectory"]
            try:
                traj = JointTrajectory(
                    np.asarray(tdoc["timestamps"], dtype=float),
                    np.asarray(tdoc["configs"], dtype=float),
                    {int(k): int(v) for k, v in (tdoc.get("keypoint_indices") or {}).items()},
                )
            except (KeyError, TypeError, ValueError) as exc:
                self._error(client, ref, "bad_request", f"bad inline trajectory: {exc}")
                return
            name = str(msg.get("as_name", "inline"))
        else:
            self._error(client, ref, "bad_request", "need 'name' or inline 'trajectory'")
            return
        if traj.dof != self.chain.dof:
            self._error(client, ref, "bad_request", f"trajectory dof {traj.dof} != robot dof {self.chain.dof}")
            return
        over = np.any(traj.configs > self.chain.upper_limits + LIMIT_TOLERANCE)
        under = np.any(traj.configs < self.chain.lower_limits - LIMIT_TOLERANCE)
        if over or under:
            self._error(client, ref, "limits", "trajectory violates joint limits")
            return
        self._execution = _Execution(trajectory=traj, name=str(name), actions=actions, requester=client)
        self.mode = MODE_EXECUTING
        self._ack(client, ref)

    def _on_gripper(self, client, ref, msg):
        action = msg.get("action")
        if action not in ("grasp", "release"):
            self._error(client, ref, "bad_request", "gripper action must be 'grasp' or 'release'")
            return
        self.workspace, affected = apply_gripper_action(self.workspace, self.chain, self.q, action)
        self._ack(client, ref, object=affected)

    def _on_stop(self, client, ref, msg):
        if self._execution is not None:
            self._emit(
                BROADCAST,
                {"type": "execution_done", "name": self._execution.name, "success": False},
            )
            self._execution = None
        self.target = self.q.copy()
        self.mode = MODE_IDLE
        self._ack(client, ref)

    def _on_reset(self, client, ref, msg):
        if self._execution is not None:
            self._execution = None
        self.target = self.q.copy()
        self.dq = np.zeros_like(self.dq)
        self.mode = MODE_IDLE
        self._ack(client, ref)

    def _on_plan(self, client, ref, msg):
        name = msg.get("name")
        if not isinstance(name, str) or not name:
            self._error(client, ref, "bad_request", "plan needs a trajectory 'name'")
            return
        if not self.workspace.keypoints:
            self._error(client, ref, "bad_request", "workspace has no keypoints")
            return
        overrides = {}
        for key in ("horizon", "dt", "control_cost", "max_iterations", "cost_tolerance"):
            if key in msg:
                overrides[key] = msg[key]
        try:
            params = PlannerParams(**overrides)
        except (TypeError, ValueError) as exc:
            self._error(client, ref, "bad_request", f"bad planner params: {exc}")
            return
        if len(self.workspace.keypoints) > params.horizon:
            self._error(client, ref, "bad_request", "more keypoints than horizon steps (K > T)")
            return
        seq = self._plan_seq.get(name, 0) + 1
        self._plan_seq[name] = seq
        self.pending_plans.append(
            _PlanRequest(
                name=name,
                params=params,
                q0=self.q.copy(),
                workspace=self.workspace,
                warm_start=self.workspace.trajectories.get(name),
                requester=client,
                ref=ref,
                seq=seq,
            )
        )
        self._ack(client, ref, queued=True)

    def run_plan(self, request: _PlanRequest):
        """Execute a queued plan request (called off-loop by a worker, or inline)."""
        try:
            result = replan_incremental(
                self.chain,
                request.q0,
                request.workspace.keypoints,
                request.params,
                warm_start=request.warm_start,
            )
        except (PlanningError, ValueError) as exc:
            return ("plan_failed", request, str(exc))
        return ("plan_done", request, result)

    def complete_plan(self, outcome):
        kind, request, payload = outcome
        if self._plan_seq.get(request.name) != request.seq:
            return  # superseded by a newer plan for the same name
        if kind == "plan_failed":
            self._emit(
                request.requester,
                {"type": "plan_done", "name": request.name, "success": False, "text": payload},
            )
            return
        result = payload
        self._plan_id += 1
        self.workspace = replace(
            self.workspace,
            trajectories={**self.workspace.trajectories, request.name: result.trajectory},
        )
        path = [
            list(p.translation) + list(p.rotation)
            for p in task_path(self.chain, result.trajectory)
        ]
        self._emit(
            BROADCAST,
            {
                "type": "plan_done",
                "name": request.name,
                "success": True,
                "plan_id": self._plan_id,
                "cost": result.cost,
                "iterations": result.iterations,
                "path": path,
                "keypoint_indices": {str(k): v for k, v in result.trajectory.keypoint_indices.items()},
            },
        )

    def run_pending_plans_sync(self):
        requests, self.pending_plans = self.pending_plans, []
        for request in requests:
            self.complete_plan(self.run_plan(request))

    # -- simulation --------------------------------------------------------

    def _advance_execution(self):
        ex = self._execution
        if ex is None:
            return
        if ex.started_at is None:
            ex.started_at = self.sim_time
        if ex.pending_action is not None:
            # dwell at a gripper keypoint until the joints have settled there
            if float(np.max(np.abs(self.q - self.target))) >= CONVERGENCE_TOL:
                return
            self.workspace, _ = apply_gripper_action(
                self.workspace, self.chain, self.q, ex.pending_action
            )
            ex.started_at += self.sim_time - ex.paused_at
            ex.pending_action = None
            ex.paused_at = None
        elapsed = self.sim_time - ex.started_at
        ts = ex.trajectory.timestamps
        configs = ex.trajectory.configs
        while ex.next_step < len(ts) and ts[ex.next_step] <= elapsed:
            step = ex.next_step
            candidate = configs[step]
            if not self._check_target_jump(candidate, f"trajectory step {step}"):
                return
            self._set_target(candidate, MODE_EXECUTING)
            ex.next_step += 1
            action = ex.actions.get(step)
            if action is not None:
                ex.pending_action = action
                ex.paused_at = self.sim_time
                return
        if ex.next_step >= len(ts):
            settled = float(np.max(np.abs(self.q - self.target))) < CONVERGENCE_TOL
            timed_out = elapsed > float(ts[-1]) + EXECUTION_SETTLE_TIMEOUT
            if settled or timed_out:
                self._emit(
                    BROADCAST,
                    {"type": "execution_done", "name": ex.name, "success": bool(settled)},
                )
                self._execution = None
                self.mode = MODE_IDLE

    def tick(self):
        """Advance simulation time by one tick and emit any due broadcasts."""
        self.sim_time += self.tick_dt
        self._tick_count += 1
        if self.mode != MODE_SAFETY_STOP:
            self._advance_execution()
            self.q, self.dq = impedance_step(
                self.q,
                self.dq,
                self.target,
                self.gains,
                self.tick_dt,
                limits=(self.chain.lower_limits, self.chain.upper_limits),
            )
            self.workspace = track_attached_object(self.workspace, self.chain, self.q)
            if self.mode == MODE_JOGGING and float(
                np.max(np.abs(self.q - self.target))
            ) < CONVERGENCE_TOL and float(np.max(np.abs(self.dq))) < CONVERGENCE_TOL:
                self.mode = MODE_IDLE
        below = self.q < self.chain.lower_limits - SAFETY_LIMIT_SLACK
        above = self.q > self.chain.upper_limits + SAFETY_LIMIT_SLACK
        if self.mode != MODE_SAFETY_STOP and np.any(below | above):
            self._enter_safety_stop("joint limit violated")
        if self._tick_count % self._state_every == 0:
            self._emit(BROADCAST, self._state_message())

    def _state_message(self) -> dict:
        held = self.workspace.attached_object()
        placement = self.workspace.robot.placement
        frames = [
            list(compose(placement, pose).translation) + list(compose(placement, pose).rotation)
            for pose in frame_poses(self.chain, self.q)
        ]
        return {
            "type": "state",
            "t": self.sim_time,
            "q": list(self.q),
            "dq": list(self.dq),
            "mode": self.mode,
            "attached_object": held.id if held is not None else None,
            "frames": frames,
        }


class WorkbenchServer:
    """TCP front end around a RobotSession.

    Reader threads enqueue decoded messages; the loop thread drains the queue,
    advances the session at tick rate, and fans broadcasts out to per-client
    writer queues so a slow client never blocks the simulation.
    """

    def __init__(self, chain: KinematicChain, config: ServerConfig = ServerConfig(), workspace=None):
        self.config = config
        self.session = RobotSession(
            chain,
            workspace=workspace,
            tick_rate=config.tick_rate,
            state_rate=config.state_rate,
            robot_name=config.robot_name,
        )
        self._inbox: Queue = Queue()
        self._clients: dict[str, "_ClientPipe"] = {}
        self._clients_lock = threading.Lock()
        self._stop = threading.Event()
        self._listener: Optional[socket.socket] = None
        self._threads: list[threading.Thread] = []
        self._client_counter = 0
        self.address: Optional[tuple[str, int]] = None

    def start(self):
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.config.host, self.config.port))
        listener.listen(16)
        listener.settimeout(0.2)
        self._listener = listener
        self.address = listener.getsockname()[:2]
        for fn in (self._accept_loop, self._sim_loop):
            thread = threading.Thread(target=fn, daemon=True, name=fn.__name__)
            thread.start()
            self._threads.append(thread)

    def serve_forever(self):
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.shutdown()

    def shutdown(self):
        self._stop.set()
        for thread in self._threads:
            thread.join(timeout=2.0)
        with self._clients_lock:
            pipes = list(self._clients.values())
            self._clients.clear()
        for pipe in pipes:
            pipe.close()
        if self._listener is not None:
            self._listener.close()
            self._listener = None

    # -- threads -----------------------------------------------------------

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._clients_lock:
                self._client_counter += 1
                key = f"client-{self._client_counter}"
                pipe = _ClientPipe(key, conn)
                self._clients[key] = pipe
            pipe.start(self._inbox)

    def _sim_loop(self):
        session = self.session
        period = 1.0 / self.config.tick_rate
        next_tick = time.monotonic() + period
        while not self._stop.is_set():
            self._drain_inbox()
            session.tick()
            self._launch_plan_workers()
            self._dispatch(session.drain_outbox())
            if self.config.realtime:
                now = time.monotonic()
                delay = next_tick - now
                if delay > 0:
                    time.sleep(delay)
                    next_tick += period
                elif delay < -1.0:
                    next_tick = now + period  # fell far behind; resync
                else:
                    next_tick += period
        # final flush so clients see the last state before close
        self._dispatch(session.drain_outbox())
        with self._clients_lock:
            pipes = list(self._clients.values())
        for pipe in pipes:
            pipe.finish()

    def _drain_inbox(self):
        session = self.session
        while True:
            try:
                kind, key, payload = self._inbox.get_nowait()
            except Empty:
                return
            if kind == "msg":
                session.handle(key, payload)
            elif kind == "bad":
                session._error(key, None, "bad_request", payload)
            elif kind == "gone":
                session.client_disconnected(key)
                with self._clients_lock:
                    pipe = self._clients.pop(key, None)
                if pipe is not None:
                    pipe.close()
            elif kind == "plan":
                session.complete_plan(payload)

    def _launch_plan_workers(self):
        session = self.session
        requests, session.pending_plans = session.pending_plans, []
        for request in requests:

            def worker(req=request):
                outcome = session.run_plan(req)
                self._inbox.put(("plan", req.requester, outcome))

            thread = threading.Thread(target=worker, daemon=True, name=f"plan-{request.name}")
            thread.start()

    def _dispatch(self, outputs):
        if not outputs:
            return
        with self._clients_lock:
            pipes = dict(self._clients)
        for dest, msg in outputs:
            data = protocol.encode_message(msg)
            if dest == BROADCAST:
                for pipe in pipes.values():
                    if pipe.welcomed:
                        pipe.send(data)
            else:
                pipe = pipes.get(dest)
                if pipe is not None:
                    if msg.get("type") == "welcome":
                        pipe.welcomed = True
                    pipe.send(data)


class _ClientPipe:
    """One connected client: reader thread plus an outbound queue/writer thread."""

    def __init__(self, key: str, conn: socket.socket):
        self.key = key
        self.conn = conn
        self.welcomed = False
        self._outbound: Queue = Queue()
        self._closed = threading.Event()

    def start(self, inbox: Queue):
        threading.Thread(target=self._read_loop, args=(inbox,), daemon=True).start()
        threading.Thread(target=self._write_loop, daemon=True).start()

    def send(self, data: bytes):
        if not self._closed.is_set():
            self._outbound.put(data)

    def finish(self):
        """Flush queued messages, then close the connection."""
        self._outbound.put(None)

    def close(self):
        self._closed.set()
        self._outbound.put(None)

    def _read_loop(self, inbox: Queue):
        buf = b""
        conn = self.conn
        while not self._closed.is_set():
            try:
                chunk = conn.recv(65536)
            except OSError:
                break
            if not chunk:
                break
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if not line.strip():
                    continue
                try:
                    msg = protocol.decode_message(line)
                except protocol.ProtocolError as exc:
                    inbox.put(("bad", self.key, str(exc)))
                    continue
                inbox.put(("msg", self.key, msg))
        inbox.put(("gone", self.key, None))

    def _write_loop(self):
        conn = self.conn
        while True:
            data = self._outbound.get()
            if data is None:
                break
            try:
                conn.sendall(data)
            except OSError:
                break
        self._closed.set()
        try:
            conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        conn.close()


def serve(
    chain: KinematicChain,
    config: ServerConfig = ServerConfig(),
    workspace: Optional[Workspace] = None,
):
    """Run a server until interrupted (blocking)."""
    server = WorkbenchServer(chain, config, workspace)
    server.serve_forever()
