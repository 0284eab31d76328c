"""codedsdf: code-conditioned neural signed distance fields for deforming
meshes, with an exact tree-accelerated distance oracle and a rebuild-per-pose
BVH baseline for benchmarking."""

from .geom import (Ray, RigidTransform, TetMesh, TriMesh, kabsch_align,
                   load_mesh, pseudonormals, ray_triangle_intersect,
                   surface_of)
from .distance import (AabbTree, SignedDistanceResult, build_aabb_tree,
                       brute_force_signed_distance, tree_signed_distance)
from .modes import (FemSystem, MaterialParams, ModalBasis,
                    assemble_fem_system, compute_linear_modes, encode_fem,
                    load_basis, save_basis)
from .skin import (AngleCodeMap, AnimationClip, Skeleton, SkinWeights,
                   build_angle_code_map, encode_skin, lbs_deform,
                   load_character, save_character, world_to_root)
from .dataset import (Dataset, Normalization, Sample, fit_normalization,
                      generate_fem_poses, load_dataset, sample_pose_sdf,
                      save_dataset)
from .net import (AdamState, Mlp, TrainConfig, backward_params,
                  clamped_l1_loss, forward_batch, input_gradient,
                  load_checkpoint, mlp_init, save_checkpoint, train)
from .collide import CollisionResult, NeuralCollider, resolve_triangle
from .bench import (BenchRecord, SliceGrid, crossover, evaluate_accuracy,
                    levelset_slice, run_benchmark)

__version__ = "0.1.0"
