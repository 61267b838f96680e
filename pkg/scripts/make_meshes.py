"""Regenerate the meshes bundled under src/probenorm/data."""

import os

from probenorm.mesh import DATA_DIR, beveled_cube, ellipsoid, write_obj

MESHES = {
    "cube_bevel": (beveled_cube(0.2, 0.04, 8.0), "0.2 m cube, top edges chamfered 40 mm wide at 8 deg"),
    "torso": (ellipsoid((0.30, 0.17, 0.11), 4), "ellipsoid 0.30 x 0.17 x 0.11 m from a level-4 icosphere"),
}

if __name__ == "__main__":
    os.makedirs(DATA_DIR, exist_ok=True)
    for name, (mesh, note) in MESHES.items():
        path = os.path.join(DATA_DIR, name + ".obj")
        write_obj(mesh, path, header=note)
        print(f"{path}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
