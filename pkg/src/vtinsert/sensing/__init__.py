from .camera import (CameraModel, DepthImage, SegMask, PointCloud,
                     LABEL_BACKGROUND, LABEL_OBJECT, LABEL_SOCKET,
                     look_at, project, backproject, render_depth,
                     render_socket_layer, downsample)
from .tactile import (TactileImage, TAXEL_RESOLUTION, FINGER_ANGLES,
                      force_shares, render_tactile, subtract_reference,
                      make_reference_pool)
from .observe import (ObsBundle, SocketLayerCache, observe,
                      write_pgm, write_xyz, DEFAULT_CLOUD_POINTS,
                      DEFAULT_GRASP_FORCE)

__all__ = [
    "CameraModel", "DepthImage", "SegMask", "PointCloud",
    "LABEL_BACKGROUND", "LABEL_OBJECT", "LABEL_SOCKET",
    "look_at", "project", "backproject", "render_depth",
    "render_socket_layer", "downsample",
    "TactileImage", "TAXEL_RESOLUTION", "FINGER_ANGLES",
    "force_shares", "render_tactile", "subtract_reference",
    "make_reference_pool",
    "ObsBundle", "SocketLayerCache", "observe", "write_pgm", "write_xyz",
    "DEFAULT_CLOUD_POINTS", "DEFAULT_GRASP_FORCE",
]
