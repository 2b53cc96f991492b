import os

# keep BLAS single-threaded before numpy loads anywhere in the test session;
# the package's gemms are too small to amortize thread handoff
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
