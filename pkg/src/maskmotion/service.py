"""Live control service.

One rollout loop advances a single env at control rate and publishes one
frame message per step.  Clients connect over a websocket, receive the
broadcast stream, and post commands (set_mask, set_goal, set_task, pause,
reset) into an inbox the loop drains one entry per control step, so every
change lands on a step boundary.  Slow clients lose oldest frames first and
never stall the loop.
"""

from __future__ import annotations

import asyncio
import json
from collections import deque
from contextlib import asynccontextmanager, suppress
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .character import MotionClip
from .checkpoint import load_params_into
from .envs import EnvConfig, action_dim, make_env
from .errors import ConfigError, InvalidInputError
from .evaluate import PolicyHandle, load_stage_policy
from .goals import TASKS, make_task
from .kinematics import clip_states, state_dim
from .masking import Mask, build_index_map
from .nets import Discriminator, GaussianPolicy
from .ppo import TrainConfig, WindowTracker, style_reward
from .rotations import encode_rotation_6d
from .train_composition import compose_rollout_action
from .train_tracking import ScriptedGenerator, extract_goal, tracking_reward

COMMAND_TYPES = ("set_mask", "set_goal", "set_task", "pause", "reset")


def _error(detail: str) -> dict:
    return {"type": "error", "detail": detail}


def load_discriminator(
    ckpt_dir: str | Path, handle: PolicyHandle
) -> tuple[Discriminator, np.ndarray]:
    """Rebuild the checkpoint's discriminator plus the feature index it
    scores (tracking checkpoints may slice the state)."""
    cfg = TrainConfig.from_dict(handle.manifest["train_config"])
    S = handle.layout.dim
    feat_idx = np.arange(S)
    condition = 0
    if handle.stage == "compose":
        condition = handle.partition.num_groups
    elif handle.stage == "track" and handle.manifest["phi_k_mode"] == "complement":
        parts = tuple(handle.manifest["tracked_parts"])
        idx = tuple(handle.partition.group_index(p) for p in parts)
        mask = Mask.from_parts(idx, handle.partition.num_groups, handle.index_map)
        feat_idx = np.flatnonzero(mask.dense == 0.0)
    disc = Discriminator(
        len(feat_idx), cfg.disc_window, cfg.disc_hidden_dims,
        condition_dim=condition, activation=cfg.activation,
    )
    load_params_into(ckpt_dir, {"disc": disc})
    disc.eval()
    disc.requires_grad_(False)
    return disc, feat_idx


class LiveSession:
    """Transport-free rollout state machine behind the websocket service."""

    def __init__(
        self,
        handle: PolicyHandle,
        clips: list[MotionClip],
        disc: Discriminator | None = None,
        disc_feat_idx: np.ndarray | None = None,
        seed: int = 0,
        task_name: str | None = None,
        task_params: dict | None = None,
    ) -> None:
        self.handle = handle
        self.clips = clips
        self.disc = disc
        self.spec = handle.spec
        self.partition = handle.partition
        self.layout = handle.layout
        self.index_map = handle.index_map
        S = self.layout.dim
        self.feat_idx = np.arange(S) if disc_feat_idx is None else disc_feat_idx
        self.cfg = TrainConfig.from_dict(handle.manifest["train_config"])
        self.env = make_env(
            self.cfg.env_backend, self.spec, handle.env_config, clips, 1
        )
        self.rng = np.random.default_rng(seed)
        self.tracker = WindowTracker(1, S, self.cfg.disc_window)
        self._clip_states = [clip_states(c) for c in clips]

        self.t = 0
        self.paused = False
        self._pending_reset = False
        self.inbox: deque = deque()
        self.task = None
        self._task_obs = None

        if handle.stage == "track":
            self.generator = ScriptedGenerator(self.spec)
            self.tracked_parts = tuple(handle.manifest["tracked_parts"])
            idx = tuple(self.partition.group_index(p) for p in self.tracked_parts)
            self.mask = Mask.from_parts(idx, self.partition.num_groups, self.index_map)
            self.tracked_joints = tuple(
                j for g in idx for j in self.partition.groups[g]
            )
            self.rot_idx = np.concatenate(
                [np.arange(self.layout.rotation_slice(j).start,
                           self.layout.rotation_slice(j).stop)
                 for j in self.tracked_joints]
            )
            self.goal_command = handle.manifest["commands"][0]
        else:
            self.generator = None
            self.mask = Mask.null(self.partition.num_groups, self.index_map)
            self.goal_command = None

        self._do_reset()
        if task_name is not None:
            made = self._make_task(task_name, task_params or {})
            if isinstance(made, str):
                raise ConfigError(made)
            self.task = made
            self.task.reset(self.rng, np.array([0]), self._info)
            self._task_obs = self.task.observe(self._info)
        if handle.task_dim > 0 and self.task is None:
            raise ConfigError(
                "checkpoint was trained with a goal task; pass task_name"
            )

    # ---------------------------------------------------------------- resets
    def _do_reset(self) -> None:
        states, info = self.env.reset(self.rng)
        W = self.cfg.disc_window
        c = int(info["clip_idx"][0])
        f = int(info["frame_idx"][0])
        seq = self._clip_states[c]
        frames = np.clip(np.arange(f - W, f + 1), 0, len(seq) - 1)
        self.tracker.seed_rows(np.array([0]), seq[frames][None])
        self._info = info
        if self.task is not None:
            self.task.reset(self.rng, np.array([0]), info)
            self._task_obs = self.task.observe(info)
        if self.handle.stage == "track":
            self._reset_goals()

    def _reset_goals(self) -> None:
        length = self.handle.env_config.max_steps + 2
        fps = float(self.handle.env_config.control_hz)
        traj = self.generator.generate(self.goal_command, 0.0, length, fps=fps)
        self.goal_seq = extract_goal(traj, self.tracked_joints)
        self.goal_step = 0

    # --------------------------------------------------------------- commands
    def post(self, msg) -> dict | None:
        """Validate a client message; queue it or return an error frame."""
        if not isinstance(msg, dict) or "type" not in msg:
            return _error("message must be an object with a 'type' field")
        mtype = msg["type"]
        if mtype not in COMMAND_TYPES:
            return _error(f"unknown message type {mtype!r}")

        if mtype == "set_mask":
            if self.handle.stage == "track":
                return _error("mask is fixed for tracking checkpoints")
            parts = msg.get("parts")
            if not isinstance(parts, list):
                return _error("set_mask needs a 'parts' list")
            try:
                idx = tuple(self.partition.group_index(str(p)) for p in parts)
                mask = Mask.from_parts(idx, self.partition.num_groups, self.index_map)
            except ValueError as e:
                return _error(str(e))
            self.inbox.append(("set_mask", mask))
        elif mtype == "set_goal":
            if self.handle.stage != "track":
                return _error("no tracking policy loaded")
            command = msg.get("command")
            if not isinstance(command, str):
                return _error("set_goal needs a 'command' string")
            try:
                parts = self.generator.tracked_parts(command)
            except ValueError as e:
                return _error(str(e))
            if parts != self.tracked_parts:
                return _error(
                    f"command {command!r} tracks {list(parts)}; this checkpoint"
                    f" tracks {list(self.tracked_parts)}"
                )
            self.inbox.append(("set_goal", command))
        elif mtype == "set_task":
            made = self._make_task(msg.get("task"), msg.get("params") or {})
            if isinstance(made, str):
                return _error(made)
            self.inbox.append(("set_task", made))
        else:
            self.inbox.append((mtype, None))
        return None

    def _make_task(self, name, params):
        """Build and dimension-check a goal task; returns the task or an
        error string."""
        if self.handle.task_dim == 0:
            return "checkpoint was trained without a goal task"
        if not isinstance(name, str):
            return "set_task needs a 'task' string"
        if not isinstance(params, dict):
            return "task params must be an object"
        try:
            task = make_task(name, self.spec, 1, **params)
        except (ValueError, TypeError) as e:
            return str(e)
        obs = task.observe(self._info) if hasattr(self, "_info") else None
        if obs is not None and obs.shape[-1] != self.handle.task_dim:
            return (
                f"task obs dim {obs.shape[-1]} does not match checkpoint"
                f" ({self.handle.task_dim})"
            )
        return task

    def apply_next(self) -> None:
        """Apply at most one queued command (called once per control step)."""
        if not self.inbox:
            return
        kind, payload = self.inbox.popleft()
        if kind == "set_mask":
            self.mask = payload
        elif kind == "set_goal":
            self.goal_command = payload
            self._reset_goals()
        elif kind == "set_task":
            self.task = payload
            self.task.reset(self.rng, np.array([0]), self._info)
            self._task_obs = self.task.observe(self._info)
        elif kind == "pause":
            self.paused = not self.paused
        elif kind == "reset":
            self._pending_reset = True

    # ---------------------------------------------------------------- stepping
    def _actions(self, states: np.ndarray) -> np.ndarray:
        flags = self.mask.flags.astype(np.float64)[None]
        dense = self.mask.dense[None]
        handle = self.handle
        if handle.stage == "base":
            masked = states * (1.0 - dense)
            parts = [masked, flags]
            if self.task is not None:
                parts.append(self._task_obs)
            obs = np.concatenate(parts, axis=-1)
            with torch.no_grad():
                a = handle.policy.act_deterministic(
                    torch.as_tensor(obs, dtype=torch.float32)
                )
            return a.numpy().astype(np.float64)
        if handle.stage == "compose":
            return compose_rollout_action(
                handle.base_policy, handle.policy, states, flags, dense
            )
        # track: current + next goal frames drive the residual
        nxt = min(self.goal_step + 1, self.goal_seq.shape[0] - 1)
        goal_obs = np.concatenate([self.goal_seq[self.goal_step], self.goal_seq[nxt]])[None]
        masked = states * (1.0 - dense)
        base_obs = np.concatenate([masked, flags], axis=-1)
        with torch.no_grad():
            a_base = handle.base_policy.act_deterministic(
                torch.as_tensor(base_obs, dtype=torch.float32)
            )
            obs = np.concatenate([states, flags, a_base.numpy(), goal_obs], axis=-1)
            a = handle.policy.act_deterministic(
                torch.as_tensor(obs, dtype=torch.float32),
                a_base,
                torch.ones(1, dtype=torch.float32),
            )
        return a.numpy().astype(np.float64)

    def _imit_reward(self) -> float:
        if self.disc is None:
            return 0.0
        windows = self.tracker.windows()
        W1 = self.cfg.disc_window + 1
        S = self.layout.dim
        sliced = windows.reshape(1, W1, S)[:, :, self.feat_idx].reshape(1, -1)
        condition = None
        if self.disc.condition_dim:
            condition = torch.as_tensor(
                self.mask.flags.astype(np.float64)[None], dtype=torch.float32
            )
        with torch.no_grad():
            score = self.disc.score(
                torch.as_tensor(sliced, dtype=torch.float32), condition
            )
        return float(style_reward(score.numpy())[0])

    def step(self) -> dict | None:
        """Advance one control step and return the frame message, or None
        while paused."""
        if self._pending_reset:
            self._do_reset()
            self._pending_reset = False
        if self.paused:
            return None
        if bool(self.env.done[0]):
            self._do_reset()

        states = self.env.current_states()
        actions = self._actions(states)
        prev_info = self._info
        next_states, done, info = self.env.step(actions)
        self.tracker.push(next_states)
        self._info = info

        r_track = None
        if self.handle.stage == "track":
            self.goal_step = min(self.goal_step + 1, self.goal_seq.shape[0] - 1)
            r_track = float(
                tracking_reward(next_states, self.goal_seq[self.goal_step], self.rot_idx)[0]
            )
        if self.task is not None:
            # side effects only (e.g. object dynamics live in the task)
            self.task.reward(prev_info, info)
            self._task_obs = self.task.observe(info)

        frame = self._frame(info, bool(done[0]), self._imit_reward(), r_track)
        self.t += 1
        return frame

    def _frame(self, info: dict, done: bool, r_imit: float, r_track) -> dict:
        pos = info["world_pos"][0]
        rot6 = encode_rotation_6d(self.env.local_rot[0])
        joints = [
            {
                "name": name,
                "pos": [float(v) for v in pos[j]],
                "rot6d": [float(v) for v in rot6[j]],
            }
            for j, name in enumerate(self.spec.joint_names)
        ]
        return {
            "type": "frame",
            "t": int(self.t),
            "joints": joints,
            "mask": [bool(f) for f in self.mask.flags],
            "goal_command": self.goal_command,
            "rewards": {"imit": float(r_imit), "track": r_track},
            "done": done,
        }

    def meta(self) -> dict:
        handle = self.handle
        return {
            "stage": handle.stage,
            "joints": list(self.spec.joint_names),
            "parents": [int(p) for p in self.spec.parents],
            "parts": list(self.partition.names),
            "part_joints": [list(g) for g in self.partition.groups],
            "mask": [bool(f) for f in self.mask.flags],
            "mask_fixed": handle.stage == "track",
            "commands": list(self.generator.command_names()) if self.generator else [],
            "tasks": sorted(TASKS) if handle.task_dim > 0 else [],
            "control_hz": float(handle.env_config.control_hz),
        }

    @classmethod
    def demo(cls, seed: int = 0, frames: int = 90) -> "LiveSession":
        """Checkpoint-free session around untrained networks, for UI work."""
        from .synth import desk_bundle

        bundle = desk_bundle(frames=frames)
        spec = bundle.spec
        cfg = TrainConfig(hidden_dims=(64, 64), disc_hidden_dims=(64, 64), seed=seed)
        layout_dim = state_dim(spec.num_joints)
        N = bundle.partition.num_groups
        D = action_dim(spec)
        torch.manual_seed(seed)
        policy = GaussianPolicy(
            layout_dim + N, D, cfg.hidden_dims, cfg.activation, cfg.log_std_init
        )
        policy.eval()
        policy.requires_grad_(False)
        env_config = EnvConfig(max_steps=cfg.max_steps)
        manifest = {
            "stage": "base",
            "train_config": cfg.to_dict(),
            "dims": {
                "state": layout_dim, "obs": layout_dim + N, "action": D,
                "groups": N, "task_obs": 0,
            },
        }
        handle = PolicyHandle(
            "base", spec, bundle.partition, policy, None, env_config, manifest
        )
        return cls(handle, bundle.clips, seed=seed)


def load_session(
    ckpt_dir: str | Path,
    clips: list[MotionClip],
    seed: int = 0,
    task_name: str | None = None,
    task_params: dict | None = None,
) -> LiveSession:
    handle = load_stage_policy(ckpt_dir)
    disc, feat_idx = load_discriminator(ckpt_dir, handle)
    return LiveSession(
        handle, clips, disc=disc, disc_feat_idx=feat_idx, seed=seed,
        task_name=task_name, task_params=task_params,
    )


# ------------------------------------------------------------------ transport
class FrameBroadcaster:
    """Fan-out of frame messages with bounded per-client queues; when a
    queue is full the oldest frame is dropped so the loop never waits."""

    def __init__(self, maxsize: int = 64) -> None:
        if maxsize < 1:
            raise InvalidInputError("queue maxsize must be >= 1")
        self.maxsize = maxsize
        self._clients: dict[int, asyncio.Queue] = {}
        self._next_id = 0
        self.dropped = 0

    def register(self) -> tuple[int, asyncio.Queue]:
        cid = self._next_id
        self._next_id += 1
        queue: asyncio.Queue = asyncio.Queue(self.maxsize)
        self._clients[cid] = queue
        return cid, queue

    def unregister(self, cid: int) -> None:
        self._clients.pop(cid, None)

    def _offer(self, queue: asyncio.Queue, item: dict) -> None:
        while True:
            try:
                queue.put_nowait(item)
                return
            except asyncio.QueueFull:
                with suppress(asyncio.QueueEmpty):
                    queue.get_nowait()
                    self.dropped += 1

    def publish(self, frame: dict) -> None:
        for queue in self._clients.values():
            self._offer(queue, frame)

    def send_to(self, cid: int, message: dict) -> None:
        queue = self._clients.get(cid)
        if queue is not None:
            self._offer(queue, message)

    @property
    def num_clients(self) -> int:
        return len(self._clients)


def create_app(session: LiveSession, frame_hz: float | None = None, queue_size: int = 64):
    """FastAPI app: GET /api/meta plus the /ws frame stream.  frame_hz
    defaults to the env control rate; tests pass a large value to run hot."""
    broadcaster = FrameBroadcaster(queue_size)
    hz = float(frame_hz) if frame_hz else float(session.handle.env_config.control_hz)
    period = 1.0 / hz

    async def rollout_loop() -> None:
        loop = asyncio.get_running_loop()
        next_tick = loop.time()
        while True:
            session.apply_next()
            frame = session.step()
            if frame is not None:
                broadcaster.publish(frame)
            next_tick += period
            delay = next_tick - loop.time()
            if delay <= 0:
                next_tick = loop.time()
                delay = 0.0
            await asyncio.sleep(delay)

    @asynccontextmanager
    async def lifespan(app):
        task = asyncio.create_task(rollout_loop())
        try:
            yield
        finally:
            task.cancel()
            with suppress(asyncio.CancelledError):
                await task

    app = FastAPI(lifespan=lifespan)
    app.state.session = session
    app.state.broadcaster = broadcaster

    @app.get("/api/meta")
    def meta() -> dict:
        return session.meta()

    @app.websocket("/ws")
    async def ws(websocket: WebSocket) -> None:
        await websocket.accept()
        cid, queue = broadcaster.register()

        async def sender() -> None:
            while True:
                await websocket.send_json(await queue.get())

        send_task = asyncio.create_task(sender())
        try:
            while True:
                raw = await websocket.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    broadcaster.send_to(cid, _error("invalid JSON"))
                    continue
                reply = session.post(msg)
                if reply is not None:
                    broadcaster.send_to(cid, reply)
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()
            with suppress(asyncio.CancelledError):
                await send_task
            broadcaster.unregister(cid)

    return app


def serve_live(
    session: LiveSession,
    host: str = "127.0.0.1",
    port: int = 8765,
    frame_hz: float | None = None,
) -> None:
    import uvicorn

    app = create_app(session, frame_hz=frame_hz)
    uvicorn.run(app, host=host, port=port, log_level="warning")
