import json

import numpy as np
import pytest

from maskmotion.character import (
    CharacterSpec,
    MotionClip,
    Pose,
    character_preset,
    desk_character,
    load_clip,
    rest_pose,
    save_clip,
    smpl22_character,
)
from maskmotion.errors import ClipFormatError, InvalidInputError
from maskmotion.kinematics import state_dim
from maskmotion.synth import desk_bundle, style_a_clip


def test_desk_preset_shape():
    spec = desk_character()
    assert spec.num_joints == 9
    assert spec.total_dof == 24
    assert spec.parents[0] == -1
    assert state_dim(spec.num_joints) == 133
    assert {spec.joint_names[e] for e in spec.end_effectors} == {"l_foot", "r_foot"}


def test_smpl22_preset_shape():
    spec = smpl22_character()
    assert spec.num_joints == 22
    assert spec.total_dof == 63
    assert state_dim(spec.num_joints) == 328


def test_preset_lookup():
    spec, height = character_preset("desk")
    assert spec.num_joints == 9 and height == 0.9
    with pytest.raises(InvalidInputError):
        character_preset("nope")


def test_spec_validation_errors():
    with pytest.raises(InvalidInputError):
        CharacterSpec(("a",), (-1,), np.zeros((1, 3)), (0,))
    with pytest.raises(InvalidInputError):  # duplicate names
        CharacterSpec(("a", "a"), (-1, 0), np.zeros((2, 3)), (0, 3))
    with pytest.raises(InvalidInputError):  # non-topological parent
        CharacterSpec(("a", "b", "c"), (-1, 2, 0), np.zeros((3, 3)), (0, 3, 3))
    with pytest.raises(InvalidInputError):  # actuated root
        CharacterSpec(("a", "b"), (-1, 0), np.zeros((2, 3)), (3, 3))
    with pytest.raises(InvalidInputError):  # bad end effector
        CharacterSpec(("a", "b"), (-1, 0), np.zeros((2, 3)), (0, 3), (5,))


def test_pose_validation():
    with pytest.raises(InvalidInputError):
        Pose(root_pos=np.zeros(2), rotations=np.zeros((9, 6)))
    with pytest.raises(InvalidInputError):
        Pose(root_pos=np.zeros(3), rotations=np.full((9, 6), np.nan))


def test_clip_validation():
    spec = desk_character()
    ident = np.tile([1.0, 0, 0, 0, 1.0, 0], (1, spec.num_joints, 1))
    with pytest.raises(InvalidInputError):  # too short
        MotionClip(spec=spec, fps=30.0, root_pos=np.zeros((1, 3)), rotations=ident)
    two = np.tile([1.0, 0, 0, 0, 1.0, 0], (2, spec.num_joints, 1))
    with pytest.raises(InvalidInputError):  # bad fps
        MotionClip(spec=spec, fps=0.0, root_pos=np.zeros((2, 3)), rotations=two)
    clip = MotionClip(spec=spec, fps=30.0, root_pos=np.zeros((2, 3)), rotations=two)
    assert len(clip) == 2
    assert clip.duration == pytest.approx(1.0 / 30.0)
    with pytest.raises(InvalidInputError):
        clip.frame(2)


def test_clip_round_trip_exact(tmp_path):
    clip = style_a_clip(desk_character())
    path = tmp_path / "a.json"
    save_clip(clip, path)
    back = load_clip(path)
    assert back.spec.matches(clip.spec)
    assert back.fps == clip.fps
    assert np.array_equal(back.root_pos, clip.root_pos)
    assert np.array_equal(back.rotations, clip.rotations)
    assert back.name == "a"


def make_doc():
    clip = style_a_clip(desk_character(), frames=4)
    return {
        "fps": clip.fps,
        "joint_names": list(clip.spec.joint_names),
        "parents": list(clip.spec.parents),
        "offsets": clip.spec.offsets.tolist(),
        "end_effectors": list(clip.spec.end_effectors),
        "frames": [
            {"root_pos": clip.root_pos[t].tolist(), "rotations_6d": clip.rotations[t].tolist()}
            for t in range(len(clip))
        ],
    }


@pytest.mark.parametrize(
    "corrupt,needle",
    [
        (lambda d: d.pop("fps"), "fps"),
        (lambda d: d.update(fps=-1), "fps"),
        (lambda d: d.update(joint_names=["x"]), "parents"),
        (lambda d: d["parents"].__setitem__(2, 7), "skeleton"),
        (lambda d: d["offsets"].__setitem__(3, [1.0]), "offsets[3]"),
        (lambda d: d.update(end_effectors=[99]), "end_effectors"),
        (lambda d: d.update(frames=d["frames"][:1]), "frames"),
        (lambda d: d["frames"][2].pop("root_pos"), "frames[2].root_pos"),
        (lambda d: d["frames"][1]["rotations_6d"].__setitem__(4, [0.0] * 5), "frames[1].rotations_6d[4]"),
        (lambda d: d["frames"][1]["rotations_6d"].__setitem__(4, [0.0] * 6), "rotations_6d"),
        (lambda d: d["frames"][0].update(root_pos=[0.0, 0.0, None]), "frames"),
    ],
)
def test_load_clip_field_diagnostics(tmp_path, corrupt, needle):
    doc = make_doc()
    corrupt(doc)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ClipFormatError) as exc:
        load_clip(path)
    assert needle in str(exc.value)
    assert "bad.json" in str(exc.value)


def test_load_clip_reports_json_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "fps": 30,\n  oops\n}')
    with pytest.raises(ClipFormatError) as exc:
        load_clip(path)
    assert "line 3" in str(exc.value)


def test_load_clip_missing_file(tmp_path):
    with pytest.raises(ClipFormatError):
        load_clip(tmp_path / "nothing.json")


def test_desk_bundle_clips_are_valid():
    bundle = desk_bundle()
    for clip in bundle.clips + [bundle.overlay]:
        assert len(clip) == 90
        assert clip.fps == 30.0
        # every frame decodes to a valid rotation
        R = clip.rotation_matrices()
        eye = np.broadcast_to(np.eye(3), R.shape)
        assert np.allclose(R @ np.swapaxes(R, -1, -2), eye, atol=1e-9)
