#!/usr/bin/env python3
"""Generate the bundled model directories under models/.

gwm_light: the full 9-block dilated stack (dilations 1,2,4,8,16,8,4,2,1,
channels 5, 3 classes).  gwm_tiny: the reduced 5-block variant (dilations
1,2,4,2,1).  Both carry seeded randomly initialized weights: they exercise
the full engine deterministically but are not trained segmenters.  Run
tools like `meshseg train` offline to produce real weights, or see the
training tests for the phantom-fit example.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from meshseg.model import (  # noqa: E402
    GWM_DILATIONS,
    GWM_LABELS,
    init_model,
    meshnet_layers,
    save_model_dir,
)


def main(models_dir: Path):
    light = init_model("gwm_light", meshnet_layers(GWM_DILATIONS, 5, 3),
                       GWM_LABELS, seed=20230521)
    save_model_dir(light, models_dir / "gwm_light")
    tiny = init_model("gwm_tiny", meshnet_layers((1, 2, 4, 2, 1), 5, 3),
                      GWM_LABELS, seed=20230522)
    save_model_dir(tiny, models_dir / "gwm_tiny")
    print(f"wrote {models_dir / 'gwm_light'} and {models_dir / 'gwm_tiny'}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else
         Path(__file__).resolve().parent.parent / "models")
