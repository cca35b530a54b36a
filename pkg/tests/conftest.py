import os
import sys
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).parent))

# keep CI/desk runs reproducible and avoid thread thrash on small boxes
torch.set_num_threads(min(4, os.cpu_count() or 1))
