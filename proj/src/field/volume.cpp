#include "blobforge/field/volume.hpp"
#include "blobforge/core/parallel.hpp"

#include <limits>

namespace bf {

Ray camera_ray(const Camera& cam, double px, double py) {
    Ray r;
    r.origin = cam.position();
    r.dir = cam.ray_direction(px, py);
    const Vec3 fwd = cam.rotation.row(2).transpose();
    r.z_scale = r.dir.dot(fwd);
    r.tmin = cam.near / r.z_scale;
    r.tmax = cam.far / r.z_scale;
    return r;
}

std::optional<std::pair<double, double>> intersect_box(const Aabb& b, const Vec3& o, const Vec3& d) {
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (d[a] == 0.0) {
            if (o[a] < b.lo[a] || o[a] > b.hi[a]) return std::nullopt;
            continue;
        }
        double ta = (b.lo[a] - o[a]) / d[a], tb = (b.hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (t1 < std::max(t0, 0.0)) return std::nullopt;
    return std::make_pair(std::max(t0, 0.0), t1);
}

RayResult march_ray(const RadianceField& field, const Ray& ray, const OccupancyGrid& occ, const VolumeOptions& opts) {
    return detail::march_generic(ray, occ, opts, [&](const Vec3& p) { return field.query(p, ray.dir); }, nullptr);
}

VolumeRender volrender(const RadianceField& field, const Camera& cam, const OccupancyGrid& occ,
                       const VolumeOptions& opts) {
    cam.validate();
    VolumeRender out;
    out.rgb = Image(cam.width, cam.height, 3);
    out.alpha = Image(cam.width, cam.height, 1);
    out.depth = Image(cam.width, cam.height, 1);
    parallel_chunks(static_cast<std::size_t>(cam.height), 1, [&](std::size_t, std::size_t y0, std::size_t y1) {
        for (std::size_t y = y0; y < y1; ++y)
            for (int x = 0; x < cam.width; ++x) {
                const RayResult r = march_ray(field, camera_ray(cam, x + 0.5, y + 0.5), occ, opts);
                for (int c = 0; c < 3; ++c) out.rgb.at(x, static_cast<int>(y), c) = r.rgb[c];
                out.alpha.at(x, static_cast<int>(y)) = r.alpha;
                out.depth.at(x, static_cast<int>(y)) = r.depth;
            }
    });
    return out;
}

} // namespace bf
