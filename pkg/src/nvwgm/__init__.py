"""NV-center emission into GaP-on-diamond whispering-gallery cavities and tapered fibers."""

__version__ = "0.1.0"
