import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import { ApiClient } from "./api.js";
import { SELECTION_COLOR, partColor } from "./colors.js";
import { ELLIPSOID_K, ellipsoidMatrix, pickPartId } from "./ellipsoids.js";
import { frameToGeometry } from "./geometry.js";
import { DragAccumulator } from "./gizmo.js";
import { SessionController } from "./session.js";
import { GizmoMode, PartKey, keyId } from "./types.js";
import { ViewStore } from "./viewState.js";

const params = new URLSearchParams(location.search);
const api = new ApiClient(params.get("api") ?? "", params.get("token") ?? undefined);
const store = new ViewStore();
const controller = new SessionController(api, store);

const canvas = document.getElementById("viewport") as HTMLCanvasElement;
const renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
const scene = new THREE.Scene();
scene.background = new THREE.Color(0x14161a);
const camera = new THREE.PerspectiveCamera(45, 1, 0.01, 100);
camera.position.set(...store.camera.position);
const controls = new OrbitControls(camera, canvas);
controls.target.set(...store.camera.target);
scene.add(new THREE.AmbientLight(0xffffff, 0.45));
const key = new THREE.DirectionalLight(0xffffff, 1.1);
key.position.set(2, 3, 2);
scene.add(key);

let meshObject: THREE.Mesh | null = null;
let framePartIds: Uint8Array | null = null;
let frameIndices: Uint32Array = new Uint32Array(0);
let frameKeys: PartKey[] = [];

const ellipsoidGroup = new THREE.Group();
scene.add(ellipsoidGroup);
const unitSphere = new THREE.SphereGeometry(1, 24, 16);

controller.onFrame = (res) => {
  const geo = frameToGeometry(res.frame);
  if (meshObject) {
    meshObject.geometry.dispose();
    meshObject.geometry = geo;
  } else {
    meshObject = new THREE.Mesh(geo, new THREE.MeshStandardMaterial({
      vertexColors: true, roughness: 0.7, metalness: 0.05 }));
    scene.add(meshObject);
  }
  framePartIds = res.frame.partIds;
  frameIndices = res.frame.indices;
  frameKeys = res.partKeys;
  setStatus(`mesh v${res.frame.meshVersion}`);
};

function rebuildEllipsoids(): void {
  ellipsoidGroup.clear();
  for (const part of store.partList) {
    if (!part.enabled) continue;
    const selected = store.isSelected(part.key);
    const color = selected ? SELECTION_COLOR :
      partColor(frameKeys.findIndex((k) => keyId(k) === keyId(part.key)));
    const mat = new THREE.MeshBasicMaterial({
      color: new THREE.Color(...color), wireframe: true,
      transparent: true, opacity: selected ? 0.9 : 0.25 });
    const m = new THREE.Mesh(unitSphere, mat);
    m.matrixAutoUpdate = false;
    m.matrix.copy(ellipsoidMatrix(part, ELLIPSOID_K));
    m.userData.partKey = part.key;
    ellipsoidGroup.add(m);
  }
}
store.onChange(rebuildEllipsoids);

const raycaster = new THREE.Raycaster();
const drag = new DragAccumulator();
let dragPlane = new THREE.Plane();
let dragStart = new THREE.Vector3();

function pointerRay(ev: PointerEvent): THREE.Raycaster {
  const rect = canvas.getBoundingClientRect();
  const ndc = new THREE.Vector2(
    ((ev.clientX - rect.left) / rect.width) * 2 - 1,
    -((ev.clientY - rect.top) / rect.height) * 2 + 1);
  raycaster.setFromCamera(ndc, camera);
  return raycaster;
}

canvas.addEventListener("pointerdown", (ev) => {
  if (ev.button !== 0 || !meshObject) return;
  const hit = pointerRay(ev).intersectObject(meshObject)[0];
  if (!hit || hit.faceIndex == null) {
    store.clearSelection();
    return;
  }
  const pid = pickPartId(hit.faceIndex, frameIndices, framePartIds);
  if (pid < 0 || pid >= frameKeys.length) return;
  store.select(frameKeys[pid], ev.shiftKey);
  if (store.gizmoMode === "translate") {
    controls.enabled = false;
    drag.begin(store.gizmoMode, store.selection);
    dragPlane = new THREE.Plane().setFromNormalAndCoplanarPoint(
      camera.getWorldDirection(new THREE.Vector3()).negate(), hit.point);
    dragStart = hit.point.clone();
  }
});

canvas.addEventListener("pointermove", (ev) => {
  if (!drag.isActive) return;
  const pt = new THREE.Vector3();
  if (!pointerRay(ev).ray.intersectPlane(dragPlane, pt)) return;
  const delta = pt.clone().sub(dragStart);
  dragStart = pt;
  drag.translate([delta.x, delta.y, delta.z]);
});

window.addEventListener("pointerup", () => {
  controls.enabled = true;
  const result = drag.end();
  if (result) void controller.applyTransform(result.keys, result.transform);
});

function setStatus(text: string): void {
  const el = document.getElementById("status");
  if (el) el.textContent = `${store.connection} | ${text}`;
}

function bind(id: string, fn: () => void): void {
  document.getElementById(id)?.addEventListener("click", fn);
}
bind("btn-undo", () => void controller.undo());
bind("btn-redo", () => void controller.redo());
bind("btn-hide", () => void controller.setEnabled(store.selection, false));
bind("btn-show-all", () => {
  void controller.setEnabled(store.partList.map((p) => p.key), true);
});
bind("btn-delete", () => void controller.deleteParts(store.selection));
for (const mode of ["translate", "rotate", "scale"] as GizmoMode[]) {
  bind(`mode-${mode}`, () => store.setGizmoMode(mode));
}

function resize(): void {
  const w = canvas.clientWidth || canvas.parentElement!.clientWidth;
  const h = canvas.clientHeight || canvas.parentElement!.clientHeight;
  renderer.setSize(w, h, false);
  camera.aspect = w / h;
  camera.updateProjectionMatrix();
}
window.addEventListener("resize", resize);
resize();

renderer.setAnimationLoop(() => {
  controls.update();
  renderer.render(scene, camera);
});

void controller.open({
  kind: "train_shape",
  index: Number(params.get("shape") ?? 0),
  source: "a",
}).catch((e) => setStatus(`open failed: ${e}`));
