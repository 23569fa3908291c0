namespace mmsurv {}
