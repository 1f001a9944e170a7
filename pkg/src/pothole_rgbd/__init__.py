"""RGB-D pothole measurement, detection metrics and neural building blocks."""
from .errors import (ConfigurationError, DepthFileError, LabelParseError, ManifestError, NoDepthError,
                     NoGroundPlaneError, PotholeError, UnsupportedOperationError, ValidationError)
from .geometry import (BoundaryChain, CameraIntrinsics, DepthFrame, MeasureOptions, PotholeMeasurement,
                       boundary_perimeter, ground_plane_height, measure_frame, pixel_scales, pothole_depth,
                       trace_boundary)
from .neural_blocks import (ConvLayerSpec, DSConvKernel, SimAMConfig, bilinear_sample, conv2d_reference,
                            conv_flops, dsconv_forward, finite_diff_gradcheck, gelu_forward, simam_attend)

__version__ = "0.1.0"
