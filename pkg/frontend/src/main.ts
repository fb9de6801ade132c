import { ApiClient } from "./api.js";
import { KeyboardController } from "./keyboard.js";
import { ReviewViewModel } from "./model.js";
import { ReviewApp } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("service") ?? "";
const token = params.get("token") ?? window.localStorage.getItem("review_token");

const api = new ApiClient(baseUrl, token);
const model = new ReviewViewModel(api);
const keyboard = new KeyboardController(model);
const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");
new ReviewApp(model, keyboard, root, (classLabel) => api.listModels(classLabel));
void model.start();
