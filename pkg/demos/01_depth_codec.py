"""Camera-aware depth: one network output, many focal lengths.

The depth head predicts z_o. Decoding scales exp(-z_o) by f_x / f_x0, so the
same object seen through a longer lens decodes farther away, just as the
pixels say it should.
"""

import numpy as np

from mono3d.codec import CodecConfig, depth_decode, depth_encode

cfg = CodecConfig()  # f_x0 = 500 px

z_o = 0.0
for f_x in (500.0, 721.5377, 1266.417):
    print(f"f_x = {f_x:9.3f}  z_o = {z_o}  ->  z = {depth_decode(z_o, f_x, cfg):.4f} m")

# encode and decode are inverses for every positive depth
z = np.geomspace(1.0, 120.0, 7)
back = depth_decode(depth_encode(z, 721.5377, cfg), 721.5377, cfg)
print("round trip max error:", np.max(np.abs(back - z)))

# doubling f_x doubles the decoded depth for a fixed network output
print("ratio:", depth_decode(-2.0, 1000.0, cfg) / depth_decode(-2.0, 500.0, cfg))
