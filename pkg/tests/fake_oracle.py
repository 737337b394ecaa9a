"""Line-JSON affordance oracle used by the tests.

Ids that are rig switch indices get the rig's true descriptor; "garbled"
always answers with prose; anything else gets a fixed two-button answer.
"""
import json
import sys

from lightswitch.sim.scenes import RIG_SWITCHES

for line in sys.stdin:
    req = json.loads(line)
    rid = req["id"]
    if rid == "garbled":
        out = "I think it is a switch of some kind"
    elif rid.isdigit() and int(rid) < len(RIG_SWITCHES):
        out = RIG_SWITCHES[int(rid)].serialize()
    else:
        out = json.dumps({"type": "push button", "count": 2, "arrangement": "side-by-side"})
    sys.stdout.write(out + "\n")
    sys.stdout.flush()
