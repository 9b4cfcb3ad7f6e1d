"""dwlab: dyadic laboratory for matrix weights and Carleson paraproducts."""

from .matrices import (
    SpdMatrix,
    PsdMatrix,
    NotPositiveDefiniteError,
    spd_sqrt,
    op_norm,
    log_det,
    loewner_geq,
)
from .grid import (
    Cube,
    Grid,
    WeightField,
    FieldFormatError,
    root_cube,
    measure,
    avg_matrix,
    weighted_avg,
    expectation_Et,
    doubling_check,
    read_weight_field,
    write_weight_field,
)
from .weights import (
    ClassReport,
    class_report,
    b2_constants,
    ainf_constants,
    thewest_constant,
    det_chain_check,
    scalar_ainfty_report,
    corollary_relations,
)
from .stopping import (
    StoppingCriterion,
    StoppingResult,
    run_stopping,
    packing_constant,
    iterated_sawtooth,
    volberg_stop,
    kato_stop,
    kato_family_stop,
    corona_stop,
    martingale_square_check,
)
from .cones import (
    ConeNet,
    NetInfeasibleError,
    maximizing_vector_bound,
    build_net,
    sector_membership,
    coverage_check,
)
from .haar import (
    HaarSystem,
    haar_decompose,
    reconstruct,
    paraproduct_plus,
    product_identity_residual,
)
from .tb import (
    CarlesonField,
    carleson_norm,
    testfun_carleson,
    canonical_family,
    verify_hypotheses,
    tb_run,
)
from .rrt import (
    RrtInstance,
    hypothesis_margin,
    conclusion_value,
    worst_case_search,
    delta_of_eps_curve,
)
from .harness import WeightGenerator, generate, inclusion_search
from .config import RunConfig

__version__ = "0.1.0"
