"""Regenerate the bundled robot model files under src/safehandover/data/models.

Both tables are nominal approximations of the real arms; capsules follow the
segment between consecutive frame origins with hand-picked radii.
"""

import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "safehandover" / "data" / "models"
PI = math.pi


def capsules(table, tool_z, radii, gripper_radius):
    caps = []
    for i in range(len(table)):
        if i + 1 < len(table):
            alpha, a, d = table[i + 1][0], table[i + 1][1], table[i + 1][2]
            end = [a, -math.sin(alpha) * d, math.cos(alpha) * d]
        else:
            end = [0.0, 0.0, tool_z]
        end = [round(v, 12) + 0.0 for v in end]
        if math.hypot(*end) < 1e-9:
            continue
        caps.append({"link": i + 1, "a": [0.0, 0.0, 0.0], "b": end, "radius": radii[i]})
    caps[-1]["radius"] = gripper_radius
    return caps


def model(name, table, limits, tool_z, radii, gripper_radius, home, note):
    joints = []
    for (alpha, a, d, off), (lo, hi, v, acc, jerk) in zip(table, limits):
        joints.append({
            "alpha": alpha, "a": a, "d": d, "theta_offset": off,
            "limits": {"lower": lo, "upper": hi, "velocity": v, "acceleration": acc, "jerk": jerk},
        })
    return {
        "name": name,
        "note": note,
        "convention": "modified-dh",
        "joints": joints,
        "tool": {"xyz": [0.0, 0.0, tool_z]},
        "home": home,
        "capsules": capsules(table, tool_z, radii, gripper_radius),
    }


def fanuc():
    table = [
        (0.0, 0.0, 0.330, 0.0),
        (-PI / 2, 0.050, 0.0, -PI / 2),
        (0.0, 0.440, 0.0, 0.0),
        (-PI / 2, 0.035, 0.420, 0.0),
        (PI / 2, 0.0, 0.0, 0.0),
        (-PI / 2, 0.0, 0.0, 0.0),
    ]
    limits = [
        (-2.96, 2.96, 1.5, 4.0, 20.0),
        (-1.74, 2.53, 1.5, 4.0, 20.0),
        (-2.44, 3.57, 1.5, 4.0, 20.0),
        (-3.31, 3.31, 2.0, 6.0, 30.0),
        (-2.18, 2.18, 2.0, 6.0, 30.0),
        (-6.28, 6.28, 2.0, 6.0, 30.0),
    ]
    home = [0.0, -0.11, 0.79, 0.0, 0.89, 0.0]
    return model("fanuc-lrmate-200id7l-like", table, limits, 0.18,
                 [0.07, 0.06, 0.055, 0.05, 0.045, 0.045], 0.045, home,
                 "Nominal LR Mate 200iD/7L-like geometry; approximation, not calibrated.")


def kinova():
    table = [
        (0.0, 0.0, 0.2848, 0.0),
        (-PI / 2, 0.0, -0.0118, 0.0),
        (PI / 2, 0.0, 0.4208, 0.0),
        (-PI / 2, 0.0, -0.0128, 0.0),
        (PI / 2, 0.0, 0.3143, 0.0),
        (-PI / 2, 0.0, 0.0, 0.0),
        (PI / 2, 0.0, 0.0, 0.0),
    ]
    limits = [
        (-3.14, 3.14, 1.2, 3.0, 15.0),
        (-2.24, 2.24, 1.2, 3.0, 15.0),
        (-3.14, 3.14, 1.2, 3.0, 15.0),
        (-2.57, 2.57, 1.2, 3.0, 15.0),
        (-3.14, 3.14, 1.5, 4.0, 20.0),
        (-2.09, 2.09, 1.5, 4.0, 20.0),
        (-3.14, 3.14, 1.5, 4.0, 20.0),
    ]
    home = [0.0, 0.16, 0.0, 1.85, 0.0, 1.13, 0.0]
    return model("kinova-gen3-like", table, limits, 0.2674,
                 [0.06, 0.055, 0.055, 0.05, 0.045, 0.045, 0.045], 0.045, home,
                 "Nominal Gen3 7-dof-like geometry; approximation, not calibrated.")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for m in (fanuc(), kinova()):
        (OUT / f"{m['name']}.json").write_text(json.dumps(m, indent=2) + "\n")
        print("wrote", m["name"])
