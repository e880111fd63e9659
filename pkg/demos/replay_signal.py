"""Where a replayed frame shows up in the 58-byte features.

Builds a short attacked capture, prints the varying byte columns around the
first injected copy and shows how window labels follow the replay set.
"""

import numpy as np

from avtp_ids.synth import StreamConfig, attacked_capture
from avtp_ids.windows import WindowSet, window_labels

att = attacked_capture(StreamConfig(seed=4, n_frames=400, first_frame=70_000), n_bursts=2)
feats = np.stack([np.frombuffer(f.data[:58], np.uint8) for f in att.frames])
varying = [c for c in range(58) if len(np.unique(feats[:, c])) > 1]
first = int(np.flatnonzero(att.injected)[0])

print("varying byte columns:", varying)
print("row  injected  " + " ".join(f"{c:>4}" for c in varying))
for r in range(first - 3, first + 6):
    print(f"{r:>3}  {'yes' if att.injected[r] else '   '}       "
          + " ".join(f"{v:>4}" for v in feats[r, varying]))

ws = WindowSet(feats, 16, labels=window_labels(att.truth, 16))
print(f"\n{len(ws)} windows of 16, {int(ws.labels.sum())} abnormal "
      f"({ws.labels.mean():.1%}); replay set holds {len(att.replay_set)} prefixes")
assert np.array_equal(window_labels(att.replay_set.mask(feats), 16), ws.labels)
